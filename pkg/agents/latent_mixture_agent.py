"""
Latent Mixture Agent - Generative separation with per-sample latent codes.
Responsibilities:
- Stage 1: fit G_B and codes on observed samples (GLO)
- Stage 2: fit G_X and per-mixture code pairs with G_B frozen
- Infer code pairs for held-out mixtures
- Convert generative estimates into masks and NES initial estimates
"""

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple, Union

import numpy as np

from utils.errors import DivergenceError, NonFiniteError
from utils.export_utils import write_json
from utils.neural_models import DEFAULT_LATENT_DIM, GeneratorModel, LatentTable, save_model
from utils.signal_io import downsample_mean, upsample_bilinear
from utils.tensor_engine import Graph, backward, constant, forward, l1_loss, save_tensor
from utils.training import flatten, minibatches

logger = logging.getLogger(__name__)

LMM_EPS = 1e-8
INFERENCE_CHUNK = 256


@dataclass
class LatentEstimates:
    """Inferred codes and generator outputs for a stack of mixtures (flattened)."""

    z_b: np.ndarray
    z_x: np.ndarray
    b_tilde: np.ndarray
    x_tilde: np.ndarray
    loss: float


def _sample_l1(prediction, target, count: int):
    """Sum over samples of per-sample mean L1."""
    return l1_loss(prediction, target) * float(count)


class LatentMixtureAgent:
    """Agent for Latent Mixtures (LM) and Latent Mixture Masking (LMM)."""

    def __init__(self, config: Dict[str, Any]):
        self.latent_dim = config.get('latent_dim', DEFAULT_LATENT_DIM)
        self.stage1_epochs = config.get('stage1_epochs', 50)
        self.stage2_epochs = config.get('stage2_epochs', 50)
        self.inference_steps = config.get('inference_steps', 500)
        self.code_lr = config.get('code_lr', 0.01)
        self.lr = config.get('lr', 0.001)
        self.batch_size = config.get('batch_size', 32)
        self.seed = config.get('seed', 0)
        self.hidden = config.get('hidden')
        self.value_range = config.get('value_range', 1.0)
        working_shape = config.get('working_shape')
        self.working_shape = tuple(working_shape) if working_shape else None

        self.generator_b: Optional[GeneratorModel] = None
        self.generator_x: Optional[GeneratorModel] = None
        self.codes_b: Optional[LatentTable] = None
        self.codes_mix_b: Optional[LatentTable] = None
        self.codes_mix_x: Optional[LatentTable] = None
        self._observed_flat: Optional[np.ndarray] = None
        self.traces: Dict[str, List[float]] = {}

    # -- resolution -----------------------------------------------------------

    def to_working(self, samples: np.ndarray) -> np.ndarray:
        """Block-average stacked samples to the working resolution, if one is set."""
        if self.working_shape is None or samples.shape[1:] == self.working_shape:
            return samples
        return downsample_mean(samples, self.working_shape)

    @staticmethod
    def upsample(samples: np.ndarray, target_shape: Tuple[int, ...]) -> np.ndarray:
        """Bilinear upsampling of stacked 2-D samples; identity when shapes match."""
        if samples.shape[1:] == tuple(target_shape):
            return samples.copy()
        return np.stack([upsample_bilinear(s, target_shape) for s in samples])

    # -- training -------------------------------------------------------------

    def _check(self, label: str, epoch: int, value: float) -> None:
        if not np.isfinite(value):
            raise DivergenceError(f"{label} loss is non-finite at epoch {epoch}")

    def train_glo(self, observed_b: np.ndarray) -> List[float]:
        """
        Stage 1: jointly fit G_B weights and one code per observed sample.

        Returns:
            Mean per-sample L1 per epoch
        """
        if len(observed_b) == 0:
            raise ValueError("GLO needs at least one observed sample")
        data = flatten(self.to_working(observed_b))
        count, dim = data.shape

        self.generator_b = GeneratorModel(self.latent_dim, dim, self.hidden, value_range=self.value_range,
                                          seed=self.seed, lr=self.lr)
        self.codes_b = LatentTable(count, self.latent_dim, seed=self.seed + 1, lr=self.lr)
        self._observed_flat = data

        rng = np.random.default_rng(self.seed + 2)
        graph = Graph(lambda z, b: _sample_l1(self.generator_b.forward(z), b, len(b.data)))
        trace = []

        logger.info(f"LM stage 1 (GLO): {count} samples, dim {dim}, latent {self.latent_dim}, "
                    f"{self.stage1_epochs} epochs")
        for epoch in range(1, self.stage1_epochs + 1):
            total = 0.0
            for rows in minibatches(count, self.batch_size, rng):
                z = self.codes_b.batch(rows)
                try:
                    loss = forward(graph, {'z': z, 'b': constant(data[rows])})
                    grads = backward(graph)
                    self.generator_b.step(grads)
                    self.codes_b.step(rows, grads[z])
                except NonFiniteError as e:
                    raise DivergenceError(f"LM stage 1 diverged at epoch {epoch}: {e}") from e
                total += float(loss.data)
            mean_loss = total / count
            self._check('LM stage 1', epoch, mean_loss)
            trace.append(mean_loss)
            logger.debug(f"LM stage 1 epoch {epoch}: loss={mean_loss:.6f}")

        self.traces['stage1'] = trace
        return trace

    def _nearest_codes(self, mixtures_flat: np.ndarray) -> np.ndarray:
        """Stage-1 code of the L1-nearest observed sample for every mixture."""
        observed = self._observed_flat
        chunk = max(1, int(4_000_000 // max(1, observed.size)))
        nearest = []
        for start in range(0, len(mixtures_flat), chunk):
            block = mixtures_flat[start:start + chunk]
            distances = np.abs(block[:, None, :] - observed[None, :, :]).sum(axis=2)
            nearest.append(np.argmin(distances, axis=1))
        return self.codes_b.codes[np.concatenate(nearest)]

    def _init_pair_tables(self, mixtures_flat: np.ndarray, seed: int, lr: float) -> Tuple[LatentTable, LatentTable]:
        count = len(mixtures_flat)
        codes_b = LatentTable(count, self.latent_dim, seed=seed, lr=lr)
        codes_x = LatentTable(count, self.latent_dim, seed=seed + 1, lr=lr)
        if self.codes_b is not None and self._observed_flat is not None:
            codes_b.assign(np.arange(count), self._nearest_codes(mixtures_flat))
        return codes_b, codes_x

    def _pair_graph(self) -> Graph:
        return Graph(lambda zb, zx, y: _sample_l1(self.generator_b.forward(zb) + self.generator_x.forward(zx),
                                                  y, len(y.data)))

    def train_stage2(self, mixtures: np.ndarray) -> List[float]:
        """
        Stage 2: fit G_X and per-mixture (z_B, z_X) codes with G_B frozen.

        Returns:
            Mean per-sample L1 per epoch
        """
        if self.generator_b is None:
            raise RuntimeError("train_glo must run before train_stage2")
        data = flatten(self.to_working(mixtures))
        count, dim = data.shape

        self.generator_x = GeneratorModel(self.latent_dim, dim, self.hidden, value_range=self.value_range,
                                          seed=self.seed + 10, lr=self.lr)
        self.codes_mix_b, self.codes_mix_x = self._init_pair_tables(data, self.seed + 11, self.lr)

        rng = np.random.default_rng(self.seed + 13)
        graph = self._pair_graph()
        trace = []

        logger.info(f"LM stage 2: {count} mixtures, {self.stage2_epochs} epochs (G_B frozen)")
        for epoch in range(1, self.stage2_epochs + 1):
            total = 0.0
            for rows in minibatches(count, self.batch_size, rng):
                zb = self.codes_mix_b.batch(rows)
                zx = self.codes_mix_x.batch(rows)
                try:
                    loss = forward(graph, {'zb': zb, 'zx': zx, 'y': constant(data[rows])})
                    grads = backward(graph)
                    self.generator_x.step(grads)
                    self.codes_mix_b.step(rows, grads[zb])
                    self.codes_mix_x.step(rows, grads[zx])
                except NonFiniteError as e:
                    raise DivergenceError(f"LM stage 2 diverged at epoch {epoch}: {e}") from e
                total += float(loss.data)
            mean_loss = total / count
            self._check('LM stage 2', epoch, mean_loss)
            trace.append(mean_loss)
            logger.debug(f"LM stage 2 epoch {epoch}: loss={mean_loss:.6f}")

        self.traces['stage2'] = trace
        return trace

    def fit(self, observed_b: np.ndarray, mixtures: np.ndarray) -> Dict[str, List[float]]:
        """Run both training stages."""
        self.train_glo(observed_b)
        self.train_stage2(mixtures)
        return self.traces

    # -- inference ------------------------------------------------------------

    def infer(self, mixtures: np.ndarray, steps: Optional[int] = None) -> LatentEstimates:
        """
        Optimize code pairs for held-out mixtures with both generators frozen.

        Mixtures are processed in independent chunks; each chunk gets its
        own code tables and Adam state.

        Args:
            mixtures: Stacked mixtures at the working resolution
            steps: Adam steps per chunk (defaults to inference_steps)

        Returns:
            LatentEstimates with flattened b_tilde / x_tilde
        """
        if self.generator_b is None or self.generator_x is None:
            raise RuntimeError("LM must be trained before inference")
        steps = self.inference_steps if steps is None else steps
        data = flatten(mixtures)
        graph = self._pair_graph()

        parts = []
        for index, start in enumerate(range(0, len(data), INFERENCE_CHUNK)):
            block = data[start:start + INFERENCE_CHUNK]
            rows = np.arange(len(block))
            codes_b, codes_x = self._init_pair_tables(block, self.seed + 100 + 2 * index, self.code_lr)
            y = constant(block)
            for _ in range(steps):
                zb, zx = codes_b.batch(rows), codes_x.batch(rows)
                forward(graph, {'zb': zb, 'zx': zx, 'y': y})
                grads = backward(graph)
                codes_b.step(rows, grads[zb])
                codes_x.step(rows, grads[zx])
            parts.append((codes_b.codes, codes_x.codes))

        z_b = np.concatenate([p[0] for p in parts]) if parts else np.zeros((0, self.latent_dim))
        z_x = np.concatenate([p[1] for p in parts]) if parts else np.zeros((0, self.latent_dim))
        b_tilde = self.generator_b.predict(z_b)
        x_tilde = self.generator_x.predict(z_x)
        loss = float(np.abs(b_tilde + x_tilde - data).mean()) if len(data) else 0.0
        logger.info(f"LM inference: {len(data)} mixtures, {steps} steps, reconstruction L1={loss:.6f}")
        return LatentEstimates(z_b=z_b, z_x=z_x, b_tilde=b_tilde, x_tilde=x_tilde, loss=loss)

    def training_estimates(self) -> LatentEstimates:
        """b~ and x~ of the training mixtures straight from the stage-2 codes."""
        if self.codes_mix_b is None:
            raise RuntimeError("train_stage2 must run first")
        b_tilde = self.generator_b.predict(self.codes_mix_b.codes)
        x_tilde = self.generator_x.predict(self.codes_mix_x.codes)
        return LatentEstimates(z_b=self.codes_mix_b.codes.copy(), z_x=self.codes_mix_x.codes.copy(),
                               b_tilde=b_tilde, x_tilde=x_tilde,
                               loss=self.traces.get('stage2', [float('nan')])[-1])

    @staticmethod
    def lmm_mask(b_tilde: np.ndarray, x_tilde: np.ndarray, eps: float = LMM_EPS) -> np.ndarray:
        """m = b~ / (b~ + x~ + eps), in [0, 1]."""
        b_tilde = np.maximum(np.asarray(b_tilde, dtype=np.float64), 0.0)
        x_tilde = np.maximum(np.asarray(x_tilde, dtype=np.float64), 0.0)
        return np.clip(b_tilde / (b_tilde + x_tilde + eps), 0.0, 1.0)

    def separate(self, mixtures: np.ndarray, estimates: Optional[LatentEstimates] = None
                 ) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        """
        LM and LMM separations of full-resolution mixtures.

        Returns:
            (x~ upsampled to full resolution, LMM mask at full resolution,
             working-resolution LMM mask)
        """
        full_shape = mixtures.shape[1:]
        working = self.to_working(mixtures)
        if estimates is None:
            estimates = self.infer(working)
        b_tilde = estimates.b_tilde.reshape(working.shape)
        x_tilde = estimates.x_tilde.reshape(working.shape)
        mask = self.lmm_mask(b_tilde, x_tilde)
        return self.upsample(x_tilde, full_shape), self.upsample(mask, full_shape), mask

    def init_for_nes(self, mixtures: np.ndarray, target_shape: Optional[Tuple[int, ...]] = None,
                     estimates: Optional[LatentEstimates] = None) -> Tuple[np.ndarray, np.ndarray]:
        """
        NES initial estimates from the LMM mask.

        The mask is computed at the working resolution, bilinearly upsampled
        to target_shape and applied as x^0 = y * (1 - m).

        Args:
            mixtures: Mixtures at target resolution
            target_shape: Sample shape of the NES run (defaults to the mixtures' shape)
            estimates: Precomputed LM estimates for these mixtures (inferred when None)

        Returns:
            (x^0, upsampled mask)
        """
        target_shape = tuple(target_shape or mixtures.shape[1:])
        if estimates is None:
            estimates = self.infer(self.to_working(mixtures))
        working_shape = (len(mixtures), *(self.working_shape or mixtures.shape[1:]))
        mask = self.lmm_mask(estimates.b_tilde.reshape(working_shape), estimates.x_tilde.reshape(working_shape))
        mask = self.upsample(mask, target_shape)
        return mixtures * (1.0 - mask), mask

    def save(self, directory: Union[str, Path]) -> str:
        """Checkpoint: both generators, latent tables and a manifest."""
        output_dir = Path(directory)
        save_model(self.generator_b, output_dir / "generator_b")
        if self.generator_x is not None:
            save_model(self.generator_x, output_dir / "generator_x")
        save_tensor(output_dir / "codes_b.egt", self.codes_b.codes)
        if self.codes_mix_b is not None:
            save_tensor(output_dir / "codes_mix_b.egt", self.codes_mix_b.codes)
            save_tensor(output_dir / "codes_mix_x.egt", self.codes_mix_x.codes)
        write_json({'latent_dim': self.latent_dim, 'working_shape': self.working_shape,
                    'seed': self.seed, 'traces': self.traces}, str(output_dir / "manifest.json"))
        return str(output_dir)
