"""
Orchestrator - Coordinates all agents in the separation pipeline.
Responsibilities:
- Build or load the dataset named by the config
- Run the configured method (single or chained) through its agents
- Evaluate estimates and collect per-iteration traces
- Write report.json, CSV tables, timings and sample dumps
- Run suites of (method, seed) cells, optionally in parallel
"""

import logging
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple

import numpy as np

from agents.adversarial_agent import AdversarialAgent
from agents.latent_mixture_agent import LatentMixtureAgent
from agents.nes_agent import NesAgent, NesResult
from agents.nmf_agent import NmfAgent
from agents.supervised_agent import SupervisedAgent
from utils.config_utils import merge_config, synth_config, validate_config
from utils.convergence import error_series
from utils.errors import ConfigError
from utils.export_utils import export_to_csv, export_to_html, write_json
from utils.metrics import MetricReport, evaluate_estimates
from utils.neural_models import mask_apply, save_model
from utils.signal_io import (
    SeparationDataset,
    istft,
    load_dataset,
    load_idx,
    save_pgm,
    write_wav,
)
from utils.synthetic_data import gen_synthetic
from utils.tensor_engine import save_tensor

logger = logging.getLogger(__name__)

METHOD_LABELS = {
    'const': 'Const',
    'nmf': 'NMF',
    'am': 'AM',
    'lm': 'LM',
    'lmm': 'LMM',
    'nes': 'NES',
    'am+nes': 'AM+NES',
    'lmm+nes': 'LMM+NES',
    'supervised': 'Supervised',
}

SEED_OFFSETS = {'nes': 0, 'lm': 1000, 'nmf': 2000, 'am': 3000, 'supervised': 4000}

SONIFY_HOP = 64
SONIFY_RATE = 8000


@dataclass
class MethodResult:
    """Eval-set estimates of the unobserved source plus method traces."""

    estimates: np.ndarray
    masks: Optional[np.ndarray] = None
    traces: Dict[str, Any] = field(default_factory=dict)
    nes: Optional[NesResult] = None
    checkpoints: Dict[str, Any] = field(default_factory=dict)


def build_dataset(config: Dict[str, Any]) -> SeparationDataset:
    """Synthetic, IDX or saved dataset as described by the config's dataset section."""
    dataset_config = config['dataset']
    source = dataset_config['source']
    if source == 'synthetic':
        return gen_synthetic(synth_config(config))
    if source == 'idx':
        return load_idx(dataset_config['images'], dataset_config['labels'], observed=dataset_config['observed'],
                        test_images_path=dataset_config['test_images'],
                        test_labels_path=dataset_config['test_labels'],
                        n_b=dataset_config['n_b'], n_y=dataset_config['n_y'], n_eval=dataset_config['n_eval'],
                        seed=config['seed'])
    return load_dataset(dataset_config['path'])


class Orchestrator:
    """Main orchestrator for one separation experiment."""

    def __init__(self, config: Dict[str, Any]):
        """
        Initialize the orchestrator.

        Args:
            config: Validated experiment configuration
        """
        self.config = config
        self.method = config['method']
        self.seed = config['seed']
        self.output_dir = Path(config['output']['dir'])
        self.timings: Dict[str, float] = {}

        logger.info(f"Orchestrator initialized for method '{self.method}' (seed {self.seed})")

    # -- agent construction ---------------------------------------------------

    def agent_config(self, section: str) -> Dict[str, Any]:
        """Section settings plus the derived seed and model widths."""
        model = self.config['model']
        settings = {**self.config[section], 'seed': self.seed + SEED_OFFSETS[section]}
        if section in ('nes', 'supervised'):
            settings['hidden'] = model['mask_hidden']
        elif section == 'lm':
            settings.update(hidden=model['generator_hidden'], latent_dim=model['latent_dim'], value_range=1.0)
        elif section == 'am':
            settings.update(mask_hidden=model['mask_hidden'], disc_hidden=model['discriminator_hidden'])
        return settings

    def _timed(self, stage: str, fn, *args, **kwargs):
        start = time.perf_counter()
        try:
            return fn(*args, **kwargs)
        finally:
            self.timings[stage] = self.timings.get(stage, 0.0) + time.perf_counter() - start

    # -- methods --------------------------------------------------------------

    def _mask_result(self, dataset: SeparationDataset, masks: np.ndarray, traces: Dict[str, Any]) -> MethodResult:
        _, x_hat = mask_apply(dataset.eval_y, masks)
        return MethodResult(estimates=x_hat, masks=masks, traces=traces)

    def _run_const(self, dataset: SeparationDataset) -> MethodResult:
        return MethodResult(estimates=SupervisedAgent.const_estimate(dataset.eval_y))

    def _run_supervised(self, dataset: SeparationDataset) -> MethodResult:
        if dataset.mixture_x is None:
            raise ValueError("Supervised method needs the dataset's true mixture components (mixture_x)")
        agent = SupervisedAgent(self.agent_config('supervised'))
        model = self._timed('supervised_train', agent.train, dataset.observed_b, dataset.mixture_x)
        result = self._mask_result(dataset, agent.masks(dataset.eval_y), {'supervised': {'losses': agent.losses}})
        result.checkpoints['mask'] = model
        return result

    def _run_nmf(self, dataset: SeparationDataset) -> MethodResult:
        agent = NmfAgent(self.agent_config('nmf'))
        self._timed('nmf_train_bases', agent.train_bases, dataset.observed_b)
        self._timed('nmf_separate', agent.separate, dataset.mixtures_y)
        _, x_tilde = self._timed('nmf_transform', agent.transform, dataset.eval_y)
        result = MethodResult(estimates=x_tilde, traces={'nmf': agent.traces})
        result.checkpoints['nmf'] = agent
        return result

    def _train_am(self, dataset: SeparationDataset) -> AdversarialAgent:
        agent = AdversarialAgent(self.agent_config('am'))
        self._timed('am_train', agent.train, dataset.observed_b, dataset.mixtures_y)
        return agent

    def _run_am(self, dataset: SeparationDataset) -> MethodResult:
        agent = self._train_am(dataset)
        result = self._mask_result(dataset, agent.masks(dataset.eval_y), {'am': agent.history})
        result.checkpoints['mask'] = agent.mask_model
        return result

    def _train_lm(self, dataset: SeparationDataset) -> LatentMixtureAgent:
        agent = LatentMixtureAgent(self.agent_config('lm'))
        self._timed('lm_stage1', agent.train_glo, dataset.observed_b)
        self._timed('lm_stage2', agent.train_stage2, dataset.mixtures_y)
        return agent

    def _run_lm(self, dataset: SeparationDataset, masking: bool) -> MethodResult:
        agent = self._train_lm(dataset)
        x_tilde, mask, _ = self._timed('lm_inference', agent.separate, dataset.eval_y)
        traces = {'lm': agent.traces}
        if masking:
            result = self._mask_result(dataset, mask, traces)
        else:
            result = MethodResult(estimates=np.maximum(x_tilde, 0.0), traces=traces)
        result.checkpoints['lm'] = agent
        return result

    def _run_nes(self, dataset: SeparationDataset, initial_estimates: Optional[np.ndarray] = None,
                 initial_eval_mask: Optional[np.ndarray] = None,
                 traces: Optional[Dict[str, Any]] = None) -> MethodResult:
        settings = self.agent_config('nes')
        if initial_estimates is not None:
            settings['init'] = 'external'
        agent = NesAgent(settings)
        snapshot_dir = self.output_dir / 'snapshots' if settings.get('snapshots') else None

        nes = self._timed('nes', agent.run, dataset, initial_estimates=initial_estimates,
                          initial_eval_mask=initial_eval_mask, snapshot_dir=snapshot_dir)
        traces = dict(traces or {})
        traces['nes'] = [state.summary() for state in nes.history]
        if dataset.has_eval:
            convergence = error_series(nes.history, dataset.eval_b, dataset.eval_y,
                                       initial_mask=nes.initial_eval_mask)
            traces['convergence'] = convergence.to_dict()
            traces['_convergence_rows'] = convergence.rows()

        result = self._mask_result(dataset, nes.final.eval_mask, traces)
        result.nes = nes
        result.checkpoints['mask'] = nes.model
        return result

    def _run_am_nes(self, dataset: SeparationDataset) -> MethodResult:
        am = self._train_am(dataset)
        x0, _ = am.init_for_nes(dataset.mixtures_y)
        eval_mask = am.masks(dataset.eval_y)
        initializer = evaluate_estimates(mask_apply(dataset.eval_y, eval_mask)[1], dataset.eval_x)
        traces = {'am': am.history, 'initializer': initializer.aggregate()}
        return self._run_nes(dataset, x0, eval_mask, traces)

    def _run_lmm_nes(self, dataset: SeparationDataset) -> MethodResult:
        lm = self._train_lm(dataset)
        x0, _ = lm.init_for_nes(dataset.mixtures_y, estimates=lm.training_estimates())
        _, eval_mask, _ = self._timed('lm_inference', lm.separate, dataset.eval_y)
        initializer = evaluate_estimates(mask_apply(dataset.eval_y, eval_mask)[1], dataset.eval_x)
        traces = {'lm': lm.traces, 'initializer': initializer.aggregate()}
        return self._run_nes(dataset, x0, eval_mask, traces)

    def run_method(self, dataset: SeparationDataset) -> MethodResult:
        """Dispatch the configured method; every method returns eval-set x estimates."""
        if not dataset.has_eval:
            raise ValueError("Dataset has no eval triples to score against")
        dispatch = {
            'const': lambda: self._run_const(dataset),
            'nmf': lambda: self._run_nmf(dataset),
            'am': lambda: self._run_am(dataset),
            'lm': lambda: self._run_lm(dataset, masking=False),
            'lmm': lambda: self._run_lm(dataset, masking=True),
            'nes': lambda: self._run_nes(dataset),
            'am+nes': lambda: self._run_am_nes(dataset),
            'lmm+nes': lambda: self._run_lmm_nes(dataset),
            'supervised': lambda: self._run_supervised(dataset),
        }
        if self.method not in dispatch:
            raise ConfigError(f"Unknown method '{self.method}'", key='method')
        return dispatch[self.method]()

    # -- experiment -----------------------------------------------------------

    def run_experiment(self) -> Dict[str, Any]:
        """
        Run one experiment end to end.

        Workflow:
        1. Build the dataset
        2. Run the method pipeline
        3. Score estimates against the eval set
        4. Write report, tables and dumps

        Returns:
            Report dictionary (also written to report.json)
        """
        logger.info("=" * 80)
        logger.info(f"Starting experiment: {self.method}")
        logger.info("=" * 80)

        report: Dict[str, Any] = {
            'status': 'running',
            'error': None,
            'method': self.method,
            'config': self.config,
            'dataset': None,
            'metrics': None,
            'traces': {},
        }
        start_time = time.perf_counter()

        try:
            logger.info("Step 1: Building dataset")
            dataset = self._timed('dataset', build_dataset, self.config)
            report['dataset'] = {**dataset.summary(), 'meta': dataset.meta}

            logger.info(f"Step 2: Running method '{self.method}'")
            result = self.run_method(dataset)
            report['traces'] = {k: v for k, v in result.traces.items() if not k.startswith('_')}

            logger.info("Step 3: Evaluating estimates")
            metrics = self._timed('evaluate', evaluate_estimates, result.estimates, dataset.eval_x)
            report['metrics'] = metrics.to_dict(include_samples=True)
            report['status'] = 'ok'

            logger.info("Step 4: Writing outputs")
            self.write_outputs(report, result, metrics, dataset)

        except Exception as e:
            logger.error(f"Experiment failed: {e}", exc_info=True)
            report['status'] = 'failed'
            report['error'] = f"{type(e).__name__}: {e}"
            self._write_report(report)
            raise

        finally:
            duration = time.perf_counter() - start_time
            self.timings['total'] = duration
            write_json({'timings_seconds': self.timings}, str(self.output_dir / 'timings.json'))
            logger.info("=" * 80)
            logger.info("Experiment completed")
            logger.info(f"Duration: {duration:.2f} seconds")
            logger.info(f"Status: {report['status']}")
            if report['metrics']:
                logger.info(f"Metrics: {report['metrics']['aggregate']}")
            logger.info("=" * 80)

        return report

    def _write_report(self, report: Dict[str, Any]) -> str:
        return write_json(report, str(self.output_dir / 'report.json'))

    def write_outputs(self, report: Dict[str, Any], result: MethodResult, metrics: MetricReport,
                      dataset: SeparationDataset) -> None:
        """report.json, metrics.csv, per-iteration CSVs, estimates and sample dumps."""
        output = self.config['output']
        self._write_report(report)
        save_tensor(self.output_dir / 'estimates.egt', result.estimates)

        if output['csv']:
            export_to_csv(metrics.rows(self.method), str(self.output_dir / 'metrics.csv'))
            if result.nes is not None:
                rows = []
                for state in result.nes.history:
                    if state.metrics is not None:
                        rows.extend(state.metrics.rows(self.method, state.iteration))
                if rows:
                    export_to_csv(rows, str(self.output_dir / 'nes_iterations.csv'))
            if result.traces.get('_convergence_rows'):
                export_to_csv(result.traces['_convergence_rows'], str(self.output_dir / 'convergence.csv'))

        if output['dump_samples'] > 0:
            self.dump_samples(dataset, result.estimates, output['dump_samples'])

        if output['save_checkpoints']:
            self._save_checkpoints(result)

    def _save_checkpoints(self, result: MethodResult) -> None:
        checkpoint_dir = self.output_dir / 'checkpoints'
        for name, item in result.checkpoints.items():
            if name == 'mask':
                save_model(item, checkpoint_dir / 'mask')
            else:
                item.save(checkpoint_dir / name)

    def dump_samples(self, dataset: SeparationDataset, estimates: np.ndarray, count: int) -> List[str]:
        """
        PGM images (mixture scaled by 1/2, truth, estimate) for the first eval samples;
        spectrogram datasets also get zero-phase WAV renderings.
        """
        if estimates.ndim != 3:
            logger.info("Samples are not 2-D; skipping image dumps")
            return []
        sample_dir = self.output_dir / 'samples'
        written = []
        spectrogram = dataset.meta.get('kind') == 'spectrogram'

        for index in range(min(count, len(estimates))):
            prefix = sample_dir / f"{index:03d}"
            written.append(save_pgm(np.clip(dataset.eval_y[index] / 2.0, 0.0, 1.0), f"{prefix}_mixture.pgm"))
            written.append(save_pgm(np.clip(dataset.eval_x[index], 0.0, 1.0), f"{prefix}_truth.pgm"))
            written.append(save_pgm(np.clip(estimates[index], 0.0, 1.0), f"{prefix}_estimate.pgm"))
            if spectrogram:
                for label, grid in (('mixture', dataset.eval_y[index]), ('truth', dataset.eval_x[index]),
                                    ('estimate', estimates[index])):
                    written.append(write_wav(f"{prefix}_{label}.wav", sonify(grid), SONIFY_RATE))

        logger.info(f"Wrote {len(written)} sample files to {sample_dir}")
        return written


def sonify(grid: np.ndarray, hop: int = SONIFY_HOP) -> np.ndarray:
    """Zero-phase inverse STFT of a (freq, time) magnitude grid, peak-normalized to 0.9."""
    magnitude = np.maximum(np.asarray(grid, dtype=np.float64), 0.0)
    bins = magnitude.shape[0]
    frame = 1 << max(1, int(np.ceil(np.log2(max(2, 2 * (bins - 1))))))
    padded = np.zeros((frame // 2 + 1, magnitude.shape[1]))
    padded[:bins] = magnitude
    signal = istft(padded, np.zeros_like(padded), hop=min(hop, frame // 2))
    peak = float(np.max(np.abs(signal))) if signal.size else 0.0
    return signal * (0.9 / peak) if peak > 0 else signal


# -- suites --------------------------------------------------------------------------

def _run_cell(cell_config: Dict[str, Any]) -> Tuple[str, int, Optional[Dict[str, Any]], Optional[str]]:
    """Run one (method, seed) cell; failures are returned, not raised."""
    method, seed = cell_config['method'], cell_config['seed']
    try:
        report = Orchestrator(cell_config).run_experiment()
        return method, seed, report['metrics']['aggregate'], None
    except Exception as e:
        return method, seed, None, f"{type(e).__name__}: {e}"


def suite_cells(suite_name: str, suite: Dict[str, Any], out_dir: str) -> List[Dict[str, Any]]:
    """Validated cell configs in (method order, seed order)."""
    base = suite.get('config') or {}
    cells = []
    for method in suite['methods']:
        for seed in suite['seeds']:
            overrides = {'method': method, 'seed': seed,
                         'output': {'dir': str(Path(out_dir) / suite_name / method.replace('+', '_') / str(seed))}}
            cells.append(validate_config(merge_config(base, overrides)))
    return cells


def _check_external_files(suite_name: str, cells: List[Dict[str, Any]]) -> None:
    dataset = cells[0]['dataset'] if cells else {}
    for key in ('images', 'labels', 'test_images', 'test_labels', 'path'):
        path = dataset.get(key)
        if path and not Path(path).exists():
            raise ConfigError(f"Suite '{suite_name}' needs external file {path} (dataset.{key})",
                              key=f"dataset.{key}")


def run_suite(suite_name: str, suite: Dict[str, Any], out_dir: str = 'results', jobs: int = 1) -> Dict[str, Any]:
    """
    Run every (method, seed) cell of a suite and assemble the comparison table.

    Cells run in worker processes when jobs > 1; the table is always
    assembled in the suite's method order and seed order.

    Returns:
        Table dictionary (suite, metric, columns, seeds, rows)
    """
    cells = suite_cells(suite_name, suite, out_dir)
    _check_external_files(suite_name, cells)

    logger.info("=" * 80)
    logger.info(f"Reproducing suite '{suite_name}': {len(cells)} cells, {jobs} job(s)")
    logger.info("=" * 80)

    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            outcomes = list(pool.map(_run_cell, cells))
    else:
        outcomes = [_run_cell(cell) for cell in cells]

    results = {(method, seed): (aggregate, error) for method, seed, aggregate, error in outcomes}
    columns = suite.get('columns') or ['psnr_mean', 'ssim_mean', 'sdr_median']
    rows = []
    for method in suite['methods']:
        row: Dict[str, Any] = {'method': METHOD_LABELS[method], 'failed': 0}
        per_seed = [results[(method, seed)] for seed in suite['seeds']]
        for aggregate, error in per_seed:
            if error:
                row['failed'] += 1
                logger.error(f"Cell {method} failed: {error}")
        for column in columns:
            values = [agg[column] for agg, _ in per_seed if agg and agg.get(column) is not None]
            row[column] = float(np.mean(values)) if values else None
        rows.append(row)

    table = {
        'suite': suite_name,
        'metric': suite.get('metric', columns[0]),
        'columns': columns,
        'seeds': list(suite['seeds']),
        'rows': rows,
    }

    suite_dir = Path(out_dir) / suite_name
    write_json(table, str(suite_dir / 'table.json'))
    export_to_csv(rows, str(suite_dir / 'table.csv'), fieldnames=['method', *columns, 'failed'])
    export_to_html(table, str(suite_dir / 'table.html'))
    return table
