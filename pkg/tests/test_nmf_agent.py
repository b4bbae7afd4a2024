"""Tests for the semi-supervised NMF baseline."""

import numpy as np
import pytest

from agents.nmf_agent import NmfAgent, nmf_objective, update_activations, update_bases
from utils.errors import ShapeMismatchError


def non_increasing(trace, rel=1e-9):
    return all(b <= a + rel * max(1.0, abs(a)) for a, b in zip(trace, trace[1:]))


def planted(rng, count, support):
    """Non-negative samples living on the given dimensions of a 6-d space."""
    samples = np.zeros((count, 6))
    samples[:, support] = rng.uniform(0.1, 1.0, size=(count, len(support)))
    return samples


class TestUpdates:
    @pytest.mark.parametrize("seed", range(20))
    def test_updates_never_increase_objective(self, seed):
        rng = np.random.default_rng(seed)
        data = rng.uniform(size=(10, 8))
        h = rng.uniform(size=(10, 3))
        w = rng.uniform(size=(3, 8))
        values = [nmf_objective(data, h, w, 0.1)]
        for _ in range(30):
            h = update_activations(data, h, w, 0.1)
            values.append(nmf_objective(data, h, w, 0.1))
            w = update_bases(data, h, w)
            values.append(nmf_objective(data, h, w, 0.1))
        assert non_increasing(values)
        assert np.all(h >= 0) and np.all(w >= 0)


class TestNmfAgent:
    def test_train_trace_is_monotone(self, rng):
        agent = NmfAgent({'bases': 4, 'sparsity': 0.1, 'seed': 1})
        w_b, h_b, trace = agent.train_bases(rng.uniform(size=(15, 3, 3)), iterations=40)
        assert len(trace) == 41
        assert non_increasing(trace)
        assert w_b.shape == (4, 9) and h_b.shape == (15, 4)

    def test_rank_one_fit(self, rng):
        data = np.outer(rng.uniform(0.5, 1.5, size=20), rng.uniform(0.1, 1.0, size=6))
        agent = NmfAgent({'bases': 1, 'sparsity': 0.0, 'seed': 0})
        _, _, trace = agent.train_bases(data, iterations=500)
        assert trace[-1] < 1e-6 * np.sum(data ** 2)

    def test_separate_recovers_planted_support(self, rng):
        observed = planted(rng, 40, [0, 1, 2])
        mixtures = planted(rng, 30, [0, 1, 2]) + planted(rng, 30, [3, 4, 5])
        agent = NmfAgent({'bases': 3, 'sparsity': 0.0, 'seed': 2})
        w_b, _, _ = agent.train_bases(observed, iterations=200)
        np.testing.assert_array_equal(w_b[:, 3:], 0.0)

        b_tilde, x_tilde, trace = agent.separate(mixtures, iterations=500)
        assert non_increasing(trace)
        np.testing.assert_array_equal(b_tilde[:, 3:], 0.0)
        error = np.abs(x_tilde[:, 3:] - mixtures[:, 3:]).sum() / mixtures[:, 3:].sum()
        assert error < 0.2

    def test_transform_uses_frozen_bases(self, rng):
        agent = NmfAgent({'bases': 3, 'sparsity': 0.05, 'seed': 3})
        agent.train_bases(rng.uniform(size=(12, 2, 3)), iterations=20)
        agent.separate(rng.uniform(size=(10, 2, 3)), iterations=20)
        w_x = agent.W_x.copy()
        b_tilde, x_tilde = agent.transform(rng.uniform(size=(4, 2, 3)), iterations=20)
        assert b_tilde.shape == x_tilde.shape == (4, 2, 3)
        assert np.all(b_tilde >= 0) and np.all(x_tilde >= 0)
        np.testing.assert_array_equal(agent.W_x, w_x)

    def test_zero_input_stays_finite(self):
        agent = NmfAgent({'bases': 2, 'seed': 0})
        _, _, trace = agent.train_bases(np.zeros((5, 4)), iterations=10)
        b_tilde, x_tilde, _ = agent.separate(np.zeros((3, 4)), iterations=10)
        assert np.all(np.isfinite(trace))
        assert np.all(np.isfinite(b_tilde)) and np.all(np.isfinite(x_tilde))

    def test_rejects_negative_input(self):
        with pytest.raises(ValueError):
            NmfAgent({'bases': 2}).train_bases(np.array([[1.0, -0.1]]))

    def test_call_order(self, rng):
        agent = NmfAgent({'bases': 2})
        with pytest.raises(RuntimeError):
            agent.separate(rng.uniform(size=(3, 4)))
        agent.train_bases(rng.uniform(size=(5, 4)), iterations=2)
        with pytest.raises(RuntimeError):
            agent.transform(rng.uniform(size=(3, 4)))
        with pytest.raises(ShapeMismatchError):
            agent.separate(rng.uniform(size=(3, 5)))

    def test_save(self, rng, tmp_path):
        agent = NmfAgent({'bases': 2, 'seed': 0})
        agent.train_bases(rng.uniform(size=(5, 4)), iterations=2)
        agent.separate(rng.uniform(size=(3, 4)), iterations=2)
        agent.save(tmp_path / "nmf")
        assert (tmp_path / "nmf" / "W_x.egt").exists()
