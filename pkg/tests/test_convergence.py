"""Tests for the error-contraction diagnostics."""

from dataclasses import dataclass
from typing import Optional

import numpy as np
import pytest

from utils.convergence import (
    error_series,
    estimate_lambda,
    optimal_mask,
    synthetic_mixture,
)
from utils.errors import MissingHistoryError, ShapeMismatchError


@dataclass
class Record:
    iteration: int
    eval_mask: Optional[np.ndarray]
    lambda_estimate: Optional[object] = None


@pytest.fixture
def triples():
    rng = np.random.default_rng(5)
    b = rng.uniform(0.2, 1.0, size=(6, 4, 4))
    x = rng.uniform(0.2, 1.0, size=(6, 4, 4))
    return b, x + b


class TestLocallyInvariantOracle:
    def test_contraction_identity(self, triples):
        """A next mask equal to the optimal mask at y^t gives |e^{t+1}| = |b / y^t| * |e^t|."""
        b, y = triples
        masks = [np.full(y.shape, 0.5)]
        for _ in range(4):
            y_t = synthetic_mixture(b, y, masks[-1])
            masks.append(b / y_t)

        history = [Record(t, m) for t, m in enumerate(masks[1:], start=1)]
        trace = error_series(history, b, y, initial_mask=masks[0])

        assert trace.iterations == [0, 1, 2, 3, 4]
        for t in range(4):
            np.testing.assert_allclose(trace.errors[t + 1], trace.predicted[t], rtol=0, atol=1e-12)

    def test_errors_contract_monotonically(self, triples):
        b, y = triples
        masks = [np.full(y.shape, 0.5)]
        for _ in range(5):
            masks.append(b / synthetic_mixture(b, y, masks[-1]))
        trace = error_series([Record(t, m) for t, m in enumerate(masks[1:], start=1)], b, y,
                             initial_mask=masks[0])
        medians = trace.median_errors()
        assert all(later <= earlier for earlier, later in zip(medians, medians[1:]))

    def test_perfect_generalization_gives_zero_error(self):
        b = np.array([[0.5, 0.25, 1.0]])
        y = np.array([[2.0, 1.0, 4.0]])
        trace = error_series([Record(1, b / y)], b, y)
        np.testing.assert_array_equal(trace.errors[0], 0.0)

    def test_optimal_mask_as_next_mask_zeroes_the_error(self):
        b = np.array([[0.5, 0.25, 1.0, 0.125]])
        y = np.array([[1.0, 1.0, 2.0, 0.5]])
        trace = error_series([Record(1, optimal_mask(b, y, eps=0.0))], b, y, initial_mask=np.full(y.shape, 0.5))
        np.testing.assert_array_equal(trace.errors[1], 0.0)
        np.testing.assert_array_equal(synthetic_mixture(b, y, optimal_mask(b, y, eps=0.0)), y)

    def test_error_definition(self):
        b = np.array([[0.5]])
        y = np.array([[1.5]])
        trace = error_series([Record(1, np.array([[0.2]]))], b, y)
        assert trace.errors[0][0, 0] == pytest.approx(abs(0.5 - 0.2 * 1.5))
        # y^t = 0.5 + 1.5 * 0.8 = 1.7
        assert trace.ratios[0][0, 0] == pytest.approx(0.5 / 1.7)

    def test_zero_synthetic_mixture_gives_zero_ratio(self):
        trace = error_series([Record(1, np.ones((1, 2)))], np.zeros((1, 2)), np.array([[0.0, 1.0]]))
        np.testing.assert_array_equal(trace.ratios[0], 0.0)


class TestErrorSeriesErrors:
    def test_empty_history(self, triples):
        b, y = triples
        with pytest.raises(MissingHistoryError):
            error_series([], b, y)

    def test_missing_mask(self, triples):
        b, y = triples
        with pytest.raises(MissingHistoryError):
            error_series([Record(1, None)], b, y)

    def test_shape_mismatch(self, triples):
        b, y = triples
        with pytest.raises(ShapeMismatchError):
            error_series([Record(1, np.ones((2, 2)))], b, y)

    def test_rows_and_dict(self, triples):
        b, y = triples
        trace = error_series([Record(1, np.full(y.shape, 0.3))], b, y, initial_mask=np.full(y.shape, 0.5))
        assert len(trace.rows()) == 2 * len(y)
        summary = trace.to_dict()
        assert summary['iterations'] == [0, 1]
        assert summary['lambda'] == [None, None]


class TestLambda:
    def test_constant_mask_gives_one(self, triples):
        b, y = triples
        y_t = synthetic_mixture(b, y, np.full(y.shape, 0.5))
        estimate = estimate_lambda(lambda arr: np.full(arr.shape, 0.3), b, y, y_t)
        assert estimate.value == pytest.approx(1.0)
        assert estimate.quantiles['q50'] == pytest.approx(1.0)
        assert estimate.violations == 0

    def test_lookup_of_optimal_mask_gives_zero(self, triples):
        b, y = triples
        y_t = synthetic_mixture(b, y, np.full(y.shape, 0.5))

        def mask_fn(arr):
            return b / arr

        estimate = estimate_lambda(mask_fn, b, y, y_t)
        assert estimate.value < 1e-8
        assert estimate.violations == 0

    def test_degenerate_denominators(self, triples):
        b, y = triples
        with pytest.raises(ValueError):
            estimate_lambda(lambda arr: b / y, b, y, y)

    def test_shape_mismatch(self, triples):
        b, y = triples
        with pytest.raises(ShapeMismatchError):
            estimate_lambda(lambda arr: arr, b, y, y[:2])


class TestOptimalMask:
    def test_clamped(self):
        m = optimal_mask(np.array([2.0, 0.5, 0.0]), np.array([1.0, 1.0, 0.0]))
        np.testing.assert_allclose(m, [1.0, 0.5, 0.0])
