"""Tests for strict config parsing and suite definitions."""

from pathlib import Path

import pytest
import yaml

from utils.config_utils import (
    SEED_ENV_VAR,
    apply_env_overrides,
    load_experiment_config,
    load_settings,
    load_suites,
    load_yaml,
    merge_config,
    synth_config,
    validate_config,
)
from utils.errors import ConfigError

CONFIG_DIR = Path(__file__).resolve().parents[1] / "config"


def write_yaml(path, data):
    path.write_text(yaml.safe_dump(data))
    return path


@pytest.fixture
def minimal():
    return {'method': 'nes', 'seed': 7, 'dataset': {'family': 'bars'}}


class TestValidateConfig:
    def test_fills_defaults(self, minimal):
        config = validate_config(minimal)
        assert config['nes']['iterations'] == 10
        assert config['nes']['epochs'] == 25
        assert config['nes']['init_constant'] == 0.5
        assert config['model']['mask_hidden'] == [512, 512]
        assert config['lm']['inference_steps'] == 500
        assert config['dataset']['shape'] is None

    def test_unknown_top_level_key(self, minimal):
        with pytest.raises(ConfigError) as excinfo:
            validate_config({**minimal, 'optimizer': {}})
        assert excinfo.value.key == 'optimizer'

    def test_unknown_section_key(self, minimal):
        with pytest.raises(ConfigError) as excinfo:
            validate_config({**minimal, 'nes': {'iteratons': 3}})
        assert excinfo.value.key == 'nes.iteratons'
        assert 'nes.iteratons' in str(excinfo.value)

    @pytest.mark.parametrize("key", ['method', 'seed', 'dataset'])
    def test_missing_required_key(self, minimal, key):
        raw = {k: v for k, v in minimal.items() if k != key}
        with pytest.raises(ConfigError) as excinfo:
            validate_config(raw)
        assert excinfo.value.key == key

    def test_unknown_method(self, minimal):
        with pytest.raises(ConfigError) as excinfo:
            validate_config({**minimal, 'method': 'ica'})
        assert excinfo.value.key == 'method'

    def test_wrong_type(self, minimal):
        with pytest.raises(ConfigError):
            validate_config({**minimal, 'nes': {'epochs': 'many'}})

    def test_int_accepted_for_float(self, minimal):
        assert validate_config({**minimal, 'nes': {'lr': 1}})['nes']['lr'] == 1

    def test_bool_is_not_int(self, minimal):
        with pytest.raises(ConfigError):
            validate_config({**minimal, 'seed': True})

    def test_negative_seed(self, minimal):
        with pytest.raises(ConfigError):
            validate_config({**minimal, 'seed': -1})

    @pytest.mark.parametrize("section,values", [
        ('nes', {'iterations': 0}),
        ('nes', {'init_constant': 1.0}),
        ('nes', {'init': 'random'}),
        ('nmf', {'sparsity': -0.1}),
        ('am', {'prior_weight': -1.0}),
        ('am', {'spectral_refine': -1}),
        ('am', {'power_iters': 0}),
        ('lm', {'code_lr': 0.0}),
        ('dataset', {'source': 'http'}),
    ])
    def test_ranges(self, minimal, section, values):
        raw = merge_config(minimal, {section: values})
        with pytest.raises(ConfigError):
            validate_config(raw)

    def test_saved_source_needs_path(self, minimal):
        with pytest.raises(ConfigError) as excinfo:
            validate_config(merge_config(minimal, {'dataset': {'source': 'saved'}}))
        assert excinfo.value.key == 'dataset.path'

    def test_custom_required(self):
        config = validate_config({'seed': 1, 'dataset': {}}, required=('seed', 'dataset'))
        assert config['method'] is None


class TestLoading:
    def test_load_experiment_config(self, tmp_path, minimal, monkeypatch):
        monkeypatch.delenv(SEED_ENV_VAR, raising=False)
        config = load_experiment_config(write_yaml(tmp_path / "exp.yaml", minimal))
        assert config['seed'] == 7

    def test_env_seed_override(self, tmp_path, minimal, monkeypatch):
        monkeypatch.setenv(SEED_ENV_VAR, '42')
        assert load_experiment_config(write_yaml(tmp_path / "exp.yaml", minimal))['seed'] == 42
        assert load_experiment_config(tmp_path / "exp.yaml", env_override=False)['seed'] == 7

    def test_bad_env_seed(self, monkeypatch):
        monkeypatch.setenv(SEED_ENV_VAR, 'abc')
        with pytest.raises(ConfigError):
            apply_env_overrides({'seed': 1})

    def test_missing_file(self, tmp_path):
        with pytest.raises(ConfigError):
            load_yaml(tmp_path / "nope.yaml")

    def test_invalid_yaml(self, tmp_path):
        path = tmp_path / "bad.yaml"
        path.write_text("method: [unclosed")
        with pytest.raises(ConfigError):
            load_yaml(path)

    def test_top_level_must_be_mapping(self, tmp_path):
        path = tmp_path / "list.yaml"
        path.write_text("- a\n- b\n")
        with pytest.raises(ConfigError):
            load_yaml(path)

    def test_settings_defaults(self, tmp_path):
        assert load_settings(tmp_path)['system']['results_dir'] == 'results'

    def test_merge_is_recursive(self):
        merged = merge_config({'nes': {'epochs': 3, 'lr': 0.1}}, {'nes': {'epochs': 5}})
        assert merged == {'nes': {'epochs': 5, 'lr': 0.1}}

    def test_synth_config(self, minimal):
        settings = synth_config(validate_config(minimal))
        assert settings['family'] == 'bars' and settings['seed'] == 7


class TestSuites:
    def test_repository_suites(self):
        suites = load_suites(CONFIG_DIR)
        assert set(suites) >= {'images-synthetic', 'denoise', 'tones', 'mnist'}
        assert suites['images-synthetic']['methods'] == ['const', 'nmf', 'am', 'lmm', 'nes', 'lmm+nes', 'supervised']
        assert suites['images-synthetic']['seeds'] == [7, 11, 13]

    def test_suite_needs_seeds(self, tmp_path):
        write_yaml(tmp_path / "suites.yaml", {'suites': {'s': {'methods': ['const']}}})
        with pytest.raises(ConfigError):
            load_suites(tmp_path)

    def test_suite_unknown_method(self, tmp_path):
        write_yaml(tmp_path / "suites.yaml", {'suites': {'s': {'methods': ['magic'], 'seeds': [1]}}})
        with pytest.raises(ConfigError):
            load_suites(tmp_path)
