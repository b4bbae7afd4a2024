"""
NMF Agent - Semi-supervised non-negative matrix factorization baseline.
Responsibilities:
- Learn bases W_b on the observed source (B = H_b W_b)
- Factorize mixtures with W_b frozen and new bases W_x absorbing the rest
- Fit activations only on held-out mixtures

Rows of every matrix are flattened samples. Updates are multiplicative and
keep every factor non-negative; the objective
||Y - H W||_F^2 + sparsity * sum(H) never increases.
"""

import logging
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple, Union

import numpy as np

from utils.errors import ShapeMismatchError
from utils.export_utils import write_json
from utils.tensor_engine import save_tensor
from utils.training import flatten

logger = logging.getLogger(__name__)

NMF_EPS = 1e-12


def nmf_objective(data: np.ndarray, activations: np.ndarray, bases: np.ndarray, sparsity: float) -> float:
    residual = data - activations @ bases
    return float(np.sum(residual * residual) + sparsity * np.sum(activations))


def update_activations(data: np.ndarray, activations: np.ndarray, bases: np.ndarray,
                       sparsity: float) -> np.ndarray:
    """H <- H * (Y W^T) / (H W W^T + sparsity / 2)"""
    numerator = data @ bases.T
    denominator = activations @ (bases @ bases.T) + 0.5 * sparsity + NMF_EPS
    return activations * numerator / denominator


def update_bases(data: np.ndarray, activations: np.ndarray, bases: np.ndarray) -> np.ndarray:
    """W <- W * (H^T Y) / (H^T H W)"""
    numerator = activations.T @ data
    denominator = (activations.T @ activations) @ bases + NMF_EPS
    return bases * numerator / denominator


class NmfAgent:
    """Agent for the semi-supervised NMF baseline."""

    def __init__(self, config: Dict[str, Any]):
        """
        Initialize the NMF agent.

        Args:
            config: bases (per source), sparsity, train_iters, separate_iters,
                eval_iters, seed
        """
        self.bases = config.get('bases', 32)
        self.sparsity = config.get('sparsity', 0.1)
        self.train_iters = config.get('train_iters', 200)
        self.separate_iters = config.get('separate_iters', 200)
        self.eval_iters = config.get('eval_iters', 200)
        self.seed = config.get('seed', 0)

        self.W_b: Optional[np.ndarray] = None
        self.W_x: Optional[np.ndarray] = None
        self.traces: Dict[str, List[float]] = {}

    @staticmethod
    def _as_matrix(samples: np.ndarray) -> np.ndarray:
        matrix = flatten(np.asarray(samples, dtype=np.float64)) if samples.ndim > 2 else np.asarray(samples, dtype=np.float64)
        if np.any(matrix < 0):
            raise ValueError("NMF input must be non-negative")
        return matrix

    def _random_factor(self, rng: np.random.Generator, shape: Tuple[int, int], scale: float) -> np.ndarray:
        return rng.uniform(0.0, 1.0, size=shape) * scale

    def train_bases(self, observed: np.ndarray, iterations: Optional[int] = None) -> Tuple[np.ndarray, np.ndarray, List[float]]:
        """
        Sparse NMF of the observed samples.

        Returns:
            (W_b, H_b, objective after every iteration, starting with the initial value)
        """
        data = self._as_matrix(observed)
        iterations = self.train_iters if iterations is None else iterations
        rng = np.random.default_rng(self.seed)
        scale = np.sqrt(max(float(data.mean()), NMF_EPS) / self.bases)

        activations = self._random_factor(rng, (data.shape[0], self.bases), scale)
        bases = self._random_factor(rng, (self.bases, data.shape[1]), scale)

        trace = [nmf_objective(data, activations, bases, self.sparsity)]
        for _ in range(iterations):
            activations = update_activations(data, activations, bases, self.sparsity)
            bases = update_bases(data, activations, bases)
            trace.append(nmf_objective(data, activations, bases, self.sparsity))

        logger.info(f"NMF bases: {self.bases} on {data.shape[0]} samples, objective "
                    f"{trace[0]:.4g} -> {trace[-1]:.4g}")
        self.W_b = bases
        self.traces['train'] = trace
        return bases, activations, trace

    def _fit_observed_only(self, data: np.ndarray, rng: np.random.Generator, iterations: int) -> np.ndarray:
        scale = np.sqrt(max(float(data.mean()), NMF_EPS) / self.bases)
        activations = self._random_factor(rng, (data.shape[0], self.W_b.shape[0]), scale)
        for _ in range(iterations):
            activations = update_activations(data, activations, self.W_b, self.sparsity)
        return activations

    def separate(self, mixtures: np.ndarray, iterations: Optional[int] = None
                 ) -> Tuple[np.ndarray, np.ndarray, List[float]]:
        """
        Factorize mixtures as H^b W_b + H^x W_x with W_b frozen.

        H^b is first fitted alone; W_x starts at the scale of the positive
        residual so the new bases only take what W_b cannot explain.

        Returns:
            (b~ = H^b W_b, x~ = H^x W_x, objective trace), in the input's shape
        """
        if self.W_b is None:
            raise RuntimeError("train_bases must run before separate")
        data = self._as_matrix(mixtures)
        if data.shape[1] != self.W_b.shape[1]:
            raise ShapeMismatchError(f"Mixture dim {data.shape[1]} does not match bases dim {self.W_b.shape[1]}")
        iterations = self.separate_iters if iterations is None else iterations
        rng = np.random.default_rng(self.seed + 1)
        l_b = self.W_b.shape[0]

        h_b = self._fit_observed_only(data, rng, iterations)
        residual = np.maximum(data - h_b @ self.W_b, 0.0)
        w_x = rng.uniform(0.0, 1.0, size=(self.bases, data.shape[1])) * (4.0 * float(residual.mean()) / self.bases)
        h_x = rng.uniform(0.0, 1.0, size=(data.shape[0], self.bases))

        activations = np.concatenate([h_b, h_x], axis=1)
        bases = np.concatenate([self.W_b, w_x], axis=0)
        trace = [nmf_objective(data, activations, bases, self.sparsity)]
        for _ in range(iterations):
            activations = update_activations(data, activations, bases, self.sparsity)
            h_new = activations[:, l_b:]
            numerator = h_new.T @ data
            denominator = (h_new.T @ activations) @ bases + NMF_EPS
            bases[l_b:] = bases[l_b:] * numerator / denominator
            trace.append(nmf_objective(data, activations, bases, self.sparsity))

        self.W_x = bases[l_b:].copy()
        self.traces['separate'] = trace
        b_tilde = activations[:, :l_b] @ self.W_b
        x_tilde = activations[:, l_b:] @ self.W_x
        logger.info(f"NMF separation: {data.shape[0]} mixtures, objective {trace[0]:.4g} -> {trace[-1]:.4g}")
        return b_tilde.reshape(mixtures.shape), x_tilde.reshape(mixtures.shape), trace

    def transform(self, mixtures: np.ndarray, iterations: Optional[int] = None) -> Tuple[np.ndarray, np.ndarray]:
        """Fit activations only, both bases frozen."""
        if self.W_b is None or self.W_x is None:
            raise RuntimeError("separate must run before transform")
        data = self._as_matrix(mixtures)
        iterations = self.eval_iters if iterations is None else iterations
        rng = np.random.default_rng(self.seed + 2)
        bases = np.concatenate([self.W_b, self.W_x], axis=0)
        scale = np.sqrt(max(float(data.mean()), NMF_EPS) / bases.shape[0])

        activations = self._random_factor(rng, (data.shape[0], bases.shape[0]), scale)
        for _ in range(iterations):
            activations = update_activations(data, activations, bases, self.sparsity)

        l_b = self.W_b.shape[0]
        b_tilde = activations[:, :l_b] @ self.W_b
        x_tilde = activations[:, l_b:] @ self.W_x
        return b_tilde.reshape(mixtures.shape), x_tilde.reshape(mixtures.shape)

    def save(self, directory: Union[str, Path]) -> str:
        output_dir = Path(directory)
        save_tensor(output_dir / "W_b.egt", self.W_b)
        if self.W_x is not None:
            save_tensor(output_dir / "W_x.egt", self.W_x)
        write_json({'bases': self.bases, 'sparsity': self.sparsity, 'seed': self.seed,
                    'final_objective': {k: v[-1] for k, v in self.traces.items()}},
                   str(output_dir / "manifest.json"))
        return str(output_dir)
