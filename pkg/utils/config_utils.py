"""
Configuration loading and strict validation.

Experiment files are YAML with a fixed set of sections. Every key is
checked against SCHEMA: unknown keys, missing required keys and values of
the wrong type raise ConfigError naming the key.
"""

import copy
import logging
import os
from pathlib import Path
from typing import Any, Dict, Iterable, Optional, Union

import yaml

from utils.errors import ConfigError

logger = logging.getLogger(__name__)

METHODS = ('const', 'nmf', 'am', 'lm', 'lmm', 'nes', 'am+nes', 'lmm+nes', 'supervised')
DATASET_SOURCES = ('synthetic', 'idx', 'saved')
SEED_ENV_VAR = 'EGGSEP_SEED'

REQUIRED = object()
ANY = object()

SCHEMA: Dict[str, Any] = {
    'method': REQUIRED,
    'seed': REQUIRED,
    'dataset': {
        'source': 'synthetic',
        'family': 'bars',
        'shape': ANY,
        'n_b': 1000,
        'n_y': 1000,
        'n_eval': 200,
        'intensity_min': 0.3,
        'intensity_max': 1.0,
        'noise_sigma': 0.1,
        'base_family': 'blobs',
        'path': ANY,
        'images': ANY,
        'labels': ANY,
        'test_images': ANY,
        'test_labels': ANY,
        'observed': 'high',
    },
    'model': {
        'mask_hidden': [512, 512],
        'generator_hidden': [256, 512],
        'discriminator_hidden': [512, 256],
        'latent_dim': 64,
    },
    'nes': {
        'iterations': 10,
        'epochs': 25,
        'lr': 0.001,
        'batch_size': 32,
        'init': 'constant',
        'init_constant': 0.5,
        'resample_per_epoch': False,
        'warm_start': False,
        'estimate_lambda': True,
        'snapshots': False,
    },
    'lm': {
        'stage1_epochs': 50,
        'stage2_epochs': 50,
        'inference_steps': 500,
        'code_lr': 0.01,
        'lr': 0.001,
        'batch_size': 32,
        'working_shape': ANY,
    },
    'nmf': {
        'bases': 32,
        'sparsity': 0.1,
        'train_iters': 200,
        'separate_iters': 200,
        'eval_iters': 200,
    },
    'am': {
        'epochs': 25,
        'mask_lr': 0.001,
        'disc_lr': 0.001,
        'prior_weight': 0.1,
        'batch_size': 32,
        'power_iters': 1,
        'spectral_refine': 50,
    },
    'supervised': {
        'epochs': 25,
        'lr': 0.001,
        'batch_size': 32,
        'resample_per_epoch': True,
    },
    'output': {
        'dir': 'results/run',
        'dump_samples': 8,
        'save_checkpoints': False,
        'csv': True,
    },
}


def load_yaml(path: Union[str, Path]) -> Dict[str, Any]:
    """Read a YAML mapping from disk."""
    config_file = Path(path)
    if not config_file.exists():
        raise ConfigError(f"Config file not found: {config_file}")
    with open(config_file, 'r', encoding='utf-8') as f:
        try:
            data = yaml.safe_load(f)
        except yaml.YAMLError as e:
            raise ConfigError(f"Invalid YAML in {config_file}: {e}") from e
    if data is None:
        return {}
    if not isinstance(data, dict):
        raise ConfigError(f"Top level of {config_file} must be a mapping")
    return data


def _check_type(key: str, value: Any, default: Any) -> None:
    if default is ANY or value is None:
        return
    if isinstance(default, bool):
        ok = isinstance(value, bool)
    elif isinstance(default, int):
        ok = isinstance(value, int) and not isinstance(value, bool)
    elif isinstance(default, float):
        ok = isinstance(value, (int, float)) and not isinstance(value, bool)
    elif isinstance(default, list):
        ok = isinstance(value, list)
    elif isinstance(default, str):
        ok = isinstance(value, str)
    else:
        ok = True
    if not ok:
        raise ConfigError(f"Key '{key}' expects {type(default).__name__}, got {type(value).__name__}", key=key)


def _validate_section(name: str, values: Any, schema: Dict[str, Any]) -> Dict[str, Any]:
    if values is None:
        values = {}
    if not isinstance(values, dict):
        raise ConfigError(f"Section '{name}' must be a mapping", key=name)

    unknown = sorted(set(values) - set(schema))
    if unknown:
        raise ConfigError(f"Unknown key '{name}.{unknown[0]}'", key=f"{name}.{unknown[0]}")

    section = {}
    for key, default in schema.items():
        if key in values:
            _check_type(f"{name}.{key}", values[key], default)
            section[key] = values[key]
        else:
            section[key] = None if default is ANY else copy.deepcopy(default)
    return section


def validate_config(raw: Dict[str, Any], required: Iterable[str] = ('method', 'seed', 'dataset')) -> Dict[str, Any]:
    """
    Validate an experiment mapping and fill in defaults.

    Args:
        raw: Parsed YAML mapping
        required: Top-level keys that must be present

    Returns:
        Complete config with every section and key populated
    """
    unknown = sorted(set(raw) - set(SCHEMA))
    if unknown:
        raise ConfigError(f"Unknown key '{unknown[0]}'", key=unknown[0])
    for key in required:
        if key not in raw:
            raise ConfigError(f"Missing required key '{key}'", key=key)

    config: Dict[str, Any] = {}
    for key, section_schema in SCHEMA.items():
        if isinstance(section_schema, dict):
            config[key] = _validate_section(key, raw.get(key), section_schema)
        else:
            config[key] = raw.get(key)

    seed = config['seed']
    if seed is not None and (not isinstance(seed, int) or isinstance(seed, bool) or seed < 0):
        raise ConfigError(f"Key 'seed' must be a non-negative integer, got {seed!r}", key='seed')

    method = config['method']
    if method is not None and method not in METHODS:
        raise ConfigError(f"Unknown method '{method}' (expected one of {', '.join(METHODS)})", key='method')

    _check_ranges(config)
    return config


def _check_ranges(config: Dict[str, Any]) -> None:
    dataset = config['dataset']
    if dataset['source'] not in DATASET_SOURCES:
        raise ConfigError(f"dataset.source must be one of {DATASET_SOURCES}", key='dataset.source')
    if dataset['source'] == 'saved' and not dataset['path']:
        raise ConfigError("dataset.path is required for saved datasets", key='dataset.path')
    if dataset['source'] == 'idx' and not (dataset['images'] and dataset['labels']):
        raise ConfigError("dataset.images and dataset.labels are required for IDX datasets",
                          key='dataset.images' if not dataset['images'] else 'dataset.labels')
    if dataset['observed'] not in ('low', 'high'):
        raise ConfigError("dataset.observed must be 'low' or 'high'", key='dataset.observed')

    nes = config['nes']
    if nes['iterations'] < 1:
        raise ConfigError("nes.iterations must be >= 1", key='nes.iterations')
    if nes['epochs'] < 1:
        raise ConfigError("nes.epochs must be >= 1", key='nes.epochs')
    if not 0.0 < nes['init_constant'] < 1.0:
        raise ConfigError("nes.init_constant must be in (0, 1)", key='nes.init_constant')
    if nes['init'] not in ('constant', 'external'):
        raise ConfigError("nes.init must be 'constant' or 'external'", key='nes.init')

    for section, keys in (('nes', ('lr',)), ('lm', ('lr', 'code_lr')), ('am', ('mask_lr', 'disc_lr')),
                          ('supervised', ('lr',))):
        for key in keys:
            if config[section][key] <= 0:
                raise ConfigError(f"{section}.{key} must be positive", key=f"{section}.{key}")
    for section, key in (('lm', 'stage1_epochs'), ('lm', 'stage2_epochs'), ('lm', 'inference_steps'),
                         ('nmf', 'bases'), ('nmf', 'train_iters'), ('nmf', 'separate_iters'),
                         ('am', 'epochs'), ('supervised', 'epochs'), ('model', 'latent_dim')):
        if config[section][key] < 1:
            raise ConfigError(f"{section}.{key} must be >= 1", key=f"{section}.{key}")
    if config['nmf']['sparsity'] < 0:
        raise ConfigError("nmf.sparsity must be >= 0", key='nmf.sparsity')
    if config['am']['prior_weight'] < 0:
        raise ConfigError("am.prior_weight must be >= 0", key='am.prior_weight')
    if config['am']['power_iters'] < 1:
        raise ConfigError("am.power_iters must be >= 1", key='am.power_iters')
    if config['am']['spectral_refine'] < 0:
        raise ConfigError("am.spectral_refine must be >= 0", key='am.spectral_refine')


def apply_env_overrides(config: Dict[str, Any]) -> Dict[str, Any]:
    """Apply EGGSEP_SEED, if set, to the experiment seed."""
    value = os.getenv(SEED_ENV_VAR)
    if value is None or value == '':
        return config
    try:
        seed = int(value)
    except ValueError as e:
        raise ConfigError(f"{SEED_ENV_VAR} must be an integer, got '{value}'", key=SEED_ENV_VAR) from e
    if seed < 0:
        raise ConfigError(f"{SEED_ENV_VAR} must be non-negative", key=SEED_ENV_VAR)

    logger.info(f"Seed overridden by {SEED_ENV_VAR}: {config.get('seed')} -> {seed}")
    return {**config, 'seed': seed}


def load_experiment_config(path: Union[str, Path], required: Iterable[str] = ('method', 'seed', 'dataset'),
                           env_override: bool = True) -> Dict[str, Any]:
    """Load, validate and env-override an experiment config file."""
    config = validate_config(load_yaml(path), required)
    return apply_env_overrides(config) if env_override else config


def merge_config(base: Dict[str, Any], overrides: Optional[Dict[str, Any]]) -> Dict[str, Any]:
    """Recursive dict merge; overrides win."""
    merged = copy.deepcopy(base)
    for key, value in (overrides or {}).items():
        if isinstance(value, dict) and isinstance(merged.get(key), dict):
            merged[key] = merge_config(merged[key], value)
        else:
            merged[key] = copy.deepcopy(value)
    return merged


def synth_config(config: Dict[str, Any]) -> Dict[str, Any]:
    """Synthetic generator settings from a validated experiment config."""
    dataset = config['dataset']
    keys = ('family', 'shape', 'n_b', 'n_y', 'n_eval', 'intensity_min', 'intensity_max',
            'noise_sigma', 'base_family')
    return {**{k: dataset[k] for k in keys}, 'seed': config['seed']}


def load_settings(config_dir: Union[str, Path] = 'config') -> Dict[str, Any]:
    """System settings (log level, directories) from config/settings.yaml."""
    settings_file = Path(config_dir) / 'settings.yaml'
    defaults = {'log_level': 'INFO', 'logs_dir': 'logs', 'data_dir': 'data', 'results_dir': 'results'}
    if not settings_file.exists():
        return {'system': defaults}
    settings = load_yaml(settings_file)
    return {**settings, 'system': {**defaults, **(settings.get('system') or {})}}


def load_suites(config_dir: Union[str, Path] = 'config') -> Dict[str, Any]:
    """Suite definitions from config/suites.yaml."""
    suites = load_yaml(Path(config_dir) / 'suites.yaml').get('suites') or {}
    for name, suite in suites.items():
        for key in ('methods', 'seeds'):
            if key not in suite:
                raise ConfigError(f"Suite '{name}' is missing '{key}'", key=f"{name}.{key}")
        for method in suite['methods']:
            if method not in METHODS:
                raise ConfigError(f"Suite '{name}' lists unknown method '{method}'", key=f"{name}.methods")
    return suites
