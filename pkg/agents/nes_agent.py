"""
NES Agent - Iterative egg separation by self-training.
Responsibilities:
- Initialize estimates of the unobserved source (constant or external)
- Synthesize (y^t, b) training pairs from observed samples and estimates
- Train a fresh masking network per iteration
- Re-estimate the unobserved source on every training mixture
- Track per-iteration eval metrics and convergence diagnostics
"""

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple, Union

import numpy as np

from utils.convergence import LambdaEstimate, estimate_lambda, synthetic_mixture
from utils.errors import ShapeMismatchError
from utils.export_utils import write_json
from utils.metrics import MetricReport, evaluate_estimates
from utils.neural_models import MaskModel, mask_apply, save_model
from utils.signal_io import SeparationDataset
from utils.tensor_engine import save_tensor
from utils.training import flatten, predict_batched, train_mask

logger = logging.getLogger(__name__)


@dataclass
class NesState:
    """Record of one NES iteration."""

    iteration: int
    losses: List[float]
    estimates: Optional[np.ndarray] = None
    eval_mask: Optional[np.ndarray] = None
    metrics: Optional[MetricReport] = None
    lambda_estimate: Optional[LambdaEstimate] = None

    def summary(self) -> Dict[str, Any]:
        return {
            'iteration': self.iteration,
            'final_loss': self.losses[-1] if self.losses else None,
            'losses': self.losses,
            'metrics': self.metrics.aggregate() if self.metrics is not None else None,
            'lambda': self.lambda_estimate.to_dict() if self.lambda_estimate is not None else None,
        }


@dataclass
class NesResult:
    model: MaskModel
    history: List[NesState] = field(default_factory=list)
    estimates: Optional[np.ndarray] = None
    initial_eval_mask: Optional[np.ndarray] = None

    @property
    def final(self) -> NesState:
        return self.history[-1]


class NesAgent:
    """Agent running the NES loop on a SeparationDataset."""

    def __init__(self, config: Dict[str, Any]):
        """
        Initialize the NES agent.

        Args:
            config: NES settings (iterations, epochs, lr, batch_size, init,
                init_constant, seed, hidden, resample_per_epoch, warm_start,
                estimate_lambda)
        """
        self.iterations = config.get('iterations', 10)
        self.epochs = config.get('epochs', 25)
        self.lr = config.get('lr', 0.001)
        self.batch_size = config.get('batch_size', 32)
        self.init = config.get('init', 'constant')
        self.init_constant_value = config.get('init_constant', 0.5)
        self.seed = config.get('seed', 0)
        self.hidden = config.get('hidden')
        self.resample_per_epoch = config.get('resample_per_epoch', False)
        self.warm_start = config.get('warm_start', False)
        self.track_lambda = config.get('estimate_lambda', True)

        if self.iterations < 1:
            raise ValueError(f"NES needs at least one iteration, got {self.iterations}")
        if self.epochs < 1:
            raise ValueError(f"NES needs at least one epoch per iteration, got {self.epochs}")

    def init_constant(self, mixtures: np.ndarray, c: Optional[float] = None) -> np.ndarray:
        """x^0 = c * y for every mixture."""
        c = self.init_constant_value if c is None else c
        if not 0.0 < c < 1.0:
            raise ValueError(f"Constant init fraction must be in (0, 1), got {c}")
        if c < 1e-6:
            logger.warning(f"Constant init fraction {c} gives (near) zero estimates")
        return c * mixtures

    def synthesize_pairs(self, observed_b: np.ndarray, estimates: np.ndarray,
                         rng: np.random.Generator) -> Tuple[np.ndarray, np.ndarray]:
        """
        One synthetic mixture per observed sample: y^t = b + x^t.

        x^t is drawn uniformly with replacement from the current estimates.

        Returns:
            (synthetic mixtures, observed targets)
        """
        if len(observed_b) == 0 or len(estimates) == 0:
            raise ValueError("Need non-empty observed samples and estimates")
        if observed_b.shape[1:] != estimates.shape[1:]:
            raise ShapeMismatchError(f"Observed samples {observed_b.shape[1:]} and estimates "
                                     f"{estimates.shape[1:]} differ in shape")
        picks = rng.integers(0, len(estimates), size=len(observed_b))
        return observed_b + estimates[picks], observed_b.copy()

    def train_iteration(self, mixtures: np.ndarray, targets: np.ndarray, iteration: int,
                        rng: np.random.Generator, previous: Optional[MaskModel] = None,
                        resample=None) -> Tuple[MaskModel, List[float]]:
        """
        Train the mask T^{t+1} on synthetic pairs.

        A freshly initialized model is used unless warm_start is set and a
        previous model is given.
        """
        if self.warm_start and previous is not None:
            model = previous
        else:
            model = MaskModel(int(np.prod(mixtures.shape[1:])), self.hidden,
                              seed=self.seed + iteration, lr=self.lr)

        losses = train_mask(model, flatten(mixtures), flatten(targets), self.epochs, self.batch_size,
                            rng, resample=resample, label=f"NES iteration {iteration}")
        return model, losses

    def masks(self, model: MaskModel, mixtures: np.ndarray) -> np.ndarray:
        """m(y) for stacked mixtures, in sample shape."""
        return predict_batched(model, flatten(mixtures)).reshape(mixtures.shape)

    def reestimate(self, model: MaskModel, mixtures: np.ndarray) -> np.ndarray:
        """x^{t+1} = y - y * m(y), clamped at zero."""
        _, x_hat = mask_apply(mixtures, self.masks(model, mixtures))
        return np.maximum(x_hat, 0.0)

    def run(self, dataset: SeparationDataset, initial_estimates: Optional[np.ndarray] = None,
            initial_eval_mask: Optional[np.ndarray] = None,
            snapshot_dir: Optional[Union[str, Path]] = None) -> NesResult:
        """
        Run the full NES loop.

        Only the last NesState keeps its training-mixture estimates in
        memory; every iteration's estimates are written when snapshot_dir
        is given.

        Args:
            dataset: Observed samples, mixtures and optional eval triples
            initial_estimates: External x^0 (required when init='external')
            initial_eval_mask: Mask equivalent of x^0 on the eval mixtures,
                used for the first iteration's lambda estimate
            snapshot_dir: Directory for per-iteration snapshots

        Returns:
            NesResult with the final model and per-iteration history
        """
        mixtures = dataset.mixtures_y
        observed = dataset.observed_b

        if initial_estimates is not None:
            if initial_estimates.shape != mixtures.shape:
                raise ShapeMismatchError(f"Initial estimates {initial_estimates.shape} do not match "
                                         f"mixtures {mixtures.shape}")
            estimates = np.maximum(initial_estimates, 0.0)
            init_label = 'external'
        elif self.init == 'external':
            raise ValueError("init='external' needs initial estimates")
        else:
            estimates = self.init_constant(mixtures)
            init_label = f"constant c={self.init_constant_value}"
            if initial_eval_mask is None and dataset.has_eval:
                initial_eval_mask = np.full(dataset.eval_y.shape, 1.0 - self.init_constant_value)

        logger.info(f"NES: {self.iterations} iterations x {self.epochs} epochs, init {init_label}, "
                    f"{len(observed)} observed / {len(mixtures)} mixtures")

        rng = np.random.default_rng(self.seed)
        result = NesResult(model=None, initial_eval_mask=initial_eval_mask)
        previous_eval_mask = initial_eval_mask
        model = None

        for t in range(1, self.iterations + 1):
            pair_y, pair_b = self.synthesize_pairs(observed, estimates, rng)

            resample = None
            if self.resample_per_epoch:
                current = estimates

                def resample(current=current):
                    y_new, b_new = self.synthesize_pairs(observed, current, rng)
                    return flatten(y_new), flatten(b_new)

            model, losses = self.train_iteration(pair_y, pair_b, t, rng, previous=model, resample=resample)
            estimates = self.reestimate(model, mixtures)

            state = NesState(iteration=t, losses=losses, estimates=estimates)
            if dataset.has_eval:
                self._evaluate(state, model, dataset, previous_eval_mask)
                previous_eval_mask = state.eval_mask

            if result.history:
                result.history[-1].estimates = None
            result.history.append(state)

            if snapshot_dir is not None:
                self.save_snapshot(state, model, snapshot_dir)

            psnr_text = ''
            if state.metrics is not None:
                psnr_text = f", eval PSNR {state.metrics.aggregate()['psnr_mean']:.2f} dB"
            logger.info(f"NES iteration {t}/{self.iterations}: loss={losses[-1]:.6f}{psnr_text}")

        result.model = model
        result.estimates = estimates
        return result

    def _evaluate(self, state: NesState, model: MaskModel, dataset: SeparationDataset,
                  previous_eval_mask: Optional[np.ndarray]) -> None:
        eval_mask = self.masks(model, dataset.eval_y)
        _, x_hat = mask_apply(dataset.eval_y, eval_mask)
        state.eval_mask = eval_mask
        state.metrics = evaluate_estimates(x_hat, dataset.eval_x)

        if previous_eval_mask is None or not self.track_lambda:
            return
        synthetic_y = synthetic_mixture(dataset.eval_b, dataset.eval_y, previous_eval_mask)
        try:
            state.lambda_estimate = estimate_lambda(lambda arr: self.masks(model, arr),
                                                    dataset.eval_b, dataset.eval_y, synthetic_y)
        except ValueError as e:
            logger.warning(f"Lambda estimate skipped at iteration {state.iteration}: {e}")

    def save_snapshot(self, state: NesState, model: MaskModel, snapshot_dir: Union[str, Path]) -> str:
        """Write estimates, eval masks and model of one iteration (EGT1 + JSON)."""
        output_dir = Path(snapshot_dir) / f"iter_{state.iteration:02d}"
        if state.estimates is not None:
            save_tensor(output_dir / "estimates.egt", state.estimates)
        if state.eval_mask is not None:
            save_tensor(output_dir / "eval_mask.egt", state.eval_mask)
        save_model(model, output_dir / "model")
        write_json(state.summary(), str(output_dir / "state.json"))
        return str(output_dir)
