"""
Convergence diagnostics for iterative egg separation.

All operations are elementwise. For an eval triple (x, b, y) and the mask
m^t trained at iteration t, the synthetic approximation of y is
y^t = b + y * (1 - m^t(y)) and its error is e^t = y^t - y = b - m^t(y) * y.
When the next mask is locally invariant around y^t the error contracts as
|e^{t+1}| = |b / y^t| * |e^t|; a generalization constant lambda bounds how
far a real mask departs from that.
"""

import logging
from dataclasses import dataclass, field
from typing import Any, Callable, Dict, List, Optional, Sequence

import numpy as np

from utils.errors import MissingHistoryError, ShapeMismatchError

logger = logging.getLogger(__name__)

OPTIMAL_MASK_EPS = 1e-8
LAMBDA_FLOOR_SCALE = 1e-6

MaskFunction = Callable[[np.ndarray], np.ndarray]


def optimal_mask(b: np.ndarray, y: np.ndarray, eps: float = OPTIMAL_MASK_EPS) -> np.ndarray:
    """b / (y + eps), clamped to [0, 1]."""
    b, y = np.asarray(b, dtype=np.float64), np.asarray(y, dtype=np.float64)
    if b.shape != y.shape:
        raise ShapeMismatchError(f"b {b.shape} and y {y.shape} differ")
    return np.clip(b / (y + eps), 0.0, 1.0)


def _ratio(numerator: np.ndarray, denominator: np.ndarray) -> np.ndarray:
    """|numerator / denominator| where the denominator is non-zero, else 0."""
    magnitude = np.abs(denominator)
    return np.divide(np.abs(numerator), magnitude, out=np.zeros_like(magnitude), where=magnitude > 0)


def synthetic_mixture(b: np.ndarray, y: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """y^t = b + y * (1 - m^t(y))."""
    return b + y * (1.0 - mask)


@dataclass
class LambdaEstimate:
    """Generalization constant estimate and its convergence-radius check."""

    value: float
    quantiles: Dict[str, float]
    valid_elements: int
    degenerate_elements: int
    violations: int
    violation_fraction: float

    def to_dict(self) -> Dict[str, Any]:
        return {
            'lambda': self.value,
            'quantiles': self.quantiles,
            'valid_elements': self.valid_elements,
            'degenerate_elements': self.degenerate_elements,
            'violations': self.violations,
            'violation_fraction': self.violation_fraction,
        }


@dataclass
class ConvergenceTrace:
    """Per-iteration error magnitudes aligned with NES iterations."""

    iterations: List[int] = field(default_factory=list)
    errors: List[np.ndarray] = field(default_factory=list)
    ratios: List[np.ndarray] = field(default_factory=list)
    predicted: List[np.ndarray] = field(default_factory=list)
    lambdas: List[Optional[LambdaEstimate]] = field(default_factory=list)

    def median_errors(self) -> List[float]:
        return [float(np.median(e)) for e in self.errors]

    def to_dict(self) -> Dict[str, Any]:
        return {
            'iterations': self.iterations,
            'median_error': self.median_errors(),
            'mean_error': [float(np.mean(e)) for e in self.errors],
            'median_ratio': [float(np.median(r)) for r in self.ratios],
            'lambda': [est.to_dict() if est is not None else None for est in self.lambdas],
        }

    def rows(self) -> List[Dict[str, Any]]:
        """One CSV row per sample per iteration."""
        rows = []
        for t, errors, ratios in zip(self.iterations, self.errors, self.ratios):
            flat_errors = errors.reshape(errors.shape[0], -1)
            flat_ratios = ratios.reshape(ratios.shape[0], -1)
            for sample in range(flat_errors.shape[0]):
                rows.append({
                    'iteration': t,
                    'sample': sample,
                    'median_abs_error': float(np.median(flat_errors[sample])),
                    'mean_abs_error': float(np.mean(flat_errors[sample])),
                    'median_ratio': float(np.median(flat_ratios[sample])),
                })
        return rows


def error_series(history: Sequence[Any], eval_b: np.ndarray, eval_y: np.ndarray,
                 initial_mask: Optional[np.ndarray] = None) -> ConvergenceTrace:
    """
    Error magnitudes |e^t| = |b - m^t(y) * y| for every recorded iteration.

    Args:
        history: Iteration records exposing `iteration`, `eval_mask` and
            optionally `lambda_estimate`
        eval_b: Observed components of the eval mixtures
        eval_y: Eval mixtures
        initial_mask: Mask equivalent of the initial estimates (iteration 0)

    Returns:
        ConvergenceTrace with errors, contraction ratios |b / y^t| and the
        locally invariant prediction |b / y^t| * |e^t| for the next iteration
    """
    if not history and initial_mask is None:
        raise MissingHistoryError("No iterations recorded")

    entries = []
    if initial_mask is not None:
        entries.append((0, initial_mask, None))
    for record in history:
        mask = getattr(record, 'eval_mask', None)
        if mask is None:
            raise MissingHistoryError(f"Iteration {getattr(record, 'iteration', '?')} has no eval mask")
        entries.append((record.iteration, mask, getattr(record, 'lambda_estimate', None)))

    trace = ConvergenceTrace()
    for t, mask, lam in entries:
        if mask.shape != eval_y.shape:
            raise ShapeMismatchError(f"Eval mask {mask.shape} does not match eval mixtures {eval_y.shape}")
        error = np.abs(eval_b - mask * eval_y)
        ratio = _ratio(eval_b, synthetic_mixture(eval_b, eval_y, mask))
        trace.iterations.append(int(t))
        trace.errors.append(error)
        trace.ratios.append(ratio)
        trace.predicted.append(ratio * error)
        trace.lambdas.append(lam)

    logger.debug(f"Error series medians: {trace.median_errors()}")
    return trace


def estimate_lambda(mask_fn: MaskFunction, eval_b: np.ndarray, eval_y: np.ndarray,
                    synthetic_y: np.ndarray, floor_scale: float = LAMBDA_FLOOR_SCALE) -> LambdaEstimate:
    """
    Estimate the generalization constant of a trained mask.

    lambda = max |b - m(y) * y| / |b - m(y^t) * y| over elements whose
    denominator exceeds floor_scale * median(|b|).

    Args:
        mask_fn: Trained mask applied to stacked samples
        eval_b: Observed components of the eval mixtures
        eval_y: Eval mixtures
        synthetic_y: Matched synthetic approximations y^t
        floor_scale: Relative denominator floor

    Returns:
        LambdaEstimate with quantiles and the count of elements violating
        the convergence radius |b / y^t| < 1 / lambda
    """
    if not (eval_b.shape == eval_y.shape == synthetic_y.shape):
        raise ShapeMismatchError("eval_b, eval_y and synthetic_y must share one shape")

    numerator = np.abs(eval_b - mask_fn(eval_y) * eval_y)
    denominator = np.abs(eval_b - mask_fn(synthetic_y) * eval_y)

    floor = max(floor_scale * float(np.median(np.abs(eval_b))), 1e-12)
    valid = denominator > floor
    if not np.any(valid):
        raise ValueError("All lambda denominators are degenerate")

    ratios = numerator[valid] / denominator[valid]
    value = float(ratios.max())

    radius = _ratio(eval_b, synthetic_y)
    violations = int(np.count_nonzero(radius >= 1.0 / value)) if value > 0 else 0

    return LambdaEstimate(
        value=value,
        quantiles={f"q{int(q * 100)}": float(np.quantile(ratios, q)) for q in (0.5, 0.9, 0.99)},
        valid_elements=int(np.count_nonzero(valid)),
        degenerate_elements=int(valid.size - np.count_nonzero(valid)),
        violations=violations,
        violation_fraction=violations / radius.size,
    )
