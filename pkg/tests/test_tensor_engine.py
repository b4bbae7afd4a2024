"""Tests for the autodiff engine, Adam and EGT1 files."""

import numpy as np
import pytest

from utils.errors import FormatError, NonFiniteError, ShapeMismatchError
from utils.tensor_engine import (
    AdamState,
    Graph,
    adam_step,
    backward,
    constant,
    forward,
    l1_loss,
    load_tensor,
    mse_loss,
    parameter,
    project_unit_ball,
    safe_div,
    save_tensor,
)


def numerical_gradient(fn, arrays, index, h=1e-6):
    """Central finite differences of a scalar fn w.r.t. arrays[index]."""
    target = arrays[index]
    grad = np.zeros_like(target)
    for pos in np.ndindex(target.shape):
        original = target[pos]
        target[pos] = original + h
        plus = fn(*arrays)
        target[pos] = original - h
        minus = fn(*arrays)
        target[pos] = original
        grad[pos] = (plus - minus) / (2 * h)
    return grad


def check_gradients(build, arrays, rtol=1e-6, atol=1e-8):
    """Compare backward() against finite differences for every input array."""
    params = [parameter(a) for a in arrays]
    graph = Graph(lambda **kw: build(*[kw[f"p{i}"] for i in range(len(params))]))
    forward(graph, {f"p{i}": p for i, p in enumerate(params)})
    grads = backward(graph)

    def scalar(*values):
        return float(build(*[constant(v) for v in values]).data)

    for index, param in enumerate(params):
        expected = numerical_gradient(scalar, [a.copy() for a in arrays], index)
        np.testing.assert_allclose(grads[param], expected, rtol=rtol, atol=atol)


class TestGradients:
    """Every op against central finite differences on random small instances."""

    @pytest.mark.parametrize("seed", range(10))
    def test_dense_layer_with_sigmoid(self, seed):
        rng = np.random.default_rng(seed)
        x = rng.normal(size=(3, 4))
        w = rng.normal(size=(4, 5))
        b = rng.normal(size=5)
        check_gradients(lambda x, w, b: ((x @ w) + b).sigmoid().sum(), [x, w, b])

    @pytest.mark.parametrize("seed", range(10))
    def test_relu_mul_sub(self, seed):
        rng = np.random.default_rng(100 + seed)
        a = rng.normal(size=(4, 3))
        b = rng.normal(size=(4, 3))
        # keep relu inputs away from the kink
        a[np.abs(a) < 0.05] = 0.3
        check_gradients(lambda a, b: (a.relu() * b - b * 2.0 + 1.0).mean(), [a, b])

    @pytest.mark.parametrize("seed", range(10))
    def test_l1_and_mse(self, seed):
        rng = np.random.default_rng(200 + seed)
        a = rng.normal(size=(5, 2))
        b = a + rng.choice([-1.0, 1.0], size=a.shape) * rng.uniform(0.1, 1.0, size=a.shape)
        check_gradients(lambda a, b: l1_loss(a, b) + mse_loss(a, b), [a, b])

    @pytest.mark.parametrize("seed", range(10))
    def test_safe_div(self, seed):
        rng = np.random.default_rng(300 + seed)
        a = rng.uniform(0.1, 1.0, size=(3, 3))
        b = rng.uniform(0.5, 2.0, size=(3, 3))
        check_gradients(lambda a, b: safe_div(a, b).sum(), [a, b])

    def test_shared_subexpression_accumulates(self):
        x = np.array([[0.3, -0.7]])
        check_gradients(lambda x: (x * x + x).sum(), [x])

    def test_backward_resets_gradients_between_passes(self):
        p = parameter(np.array([1.0, 2.0]))
        graph = Graph(lambda p: (p * 3.0).sum())
        forward(graph, {'p': p})
        first = backward(graph)[p].copy()
        forward(graph, {'p': p})
        second = backward(graph)[p]
        np.testing.assert_array_equal(first, second)
        np.testing.assert_array_equal(second, [3.0, 3.0])

    def test_backward_needs_scalar_root(self):
        graph = Graph(lambda p: p * 2.0)
        forward(graph, {'p': parameter(np.ones(3))})
        with pytest.raises(ShapeMismatchError):
            backward(graph)

    def test_backward_before_forward(self):
        with pytest.raises(RuntimeError):
            backward(Graph(lambda p: p.sum()))


class TestOps:
    def test_shape_mismatch(self):
        with pytest.raises(ShapeMismatchError):
            parameter(np.ones((2, 3))) * parameter(np.ones((3, 2)))
        with pytest.raises(ShapeMismatchError):
            parameter(np.ones((2, 3))) @ parameter(np.ones((2, 3)))

    def test_non_finite_is_rejected(self):
        with pytest.raises(NonFiniteError):
            parameter(np.array([1e308])) * 1e10

    def test_sigmoid_is_stable_for_large_inputs(self):
        out = constant(np.array([-1000.0, 0.0, 1000.0])).sigmoid().data
        np.testing.assert_allclose(out, [0.0, 0.5, 1.0])

    def test_safe_div_epsilon(self):
        out = safe_div(constant(np.array([1.0])), constant(np.array([0.0]))).data
        assert out[0] == pytest.approx(1e8)


class TestAdam:
    def test_first_step_moves_by_lr(self):
        p = parameter(np.array([1.0, -1.0]))
        state = AdamState([p], lr=0.1)
        adam_step([p], [np.array([2.0, -0.5])], state)
        np.testing.assert_allclose(p.data, [0.9, -0.9], atol=1e-7)

    def test_first_step_with_default_hyperparameters(self):
        p = parameter(np.array([0.0]))
        adam_step([p], [np.array([1.0])], AdamState([p], lr=0.001))
        assert abs(p.data[0] - (-0.001)) < 1e-6

    def test_zero_gradient_on_fresh_state_is_a_no_op(self):
        p = parameter(np.array([0.25, -3.0]))
        adam_step([p], [np.zeros(2)], AdamState([p]))
        np.testing.assert_array_equal(p.data, [0.25, -3.0])

    def test_two_steps_match_scalar_reference(self):
        lr, beta1, beta2, eps = 0.001, 0.9, 0.999, 1e-8
        value, m, v = 0.0, 0.0, 0.0
        for t in (1, 2):
            m = beta1 * m + (1.0 - beta1) * 1.0
            v = beta2 * v + (1.0 - beta2) * 1.0
            m_hat = m / (1.0 - beta1 ** t)
            v_hat = v / (1.0 - beta2 ** t)
            value -= lr * m_hat / (v_hat ** 0.5 + eps)

        p = parameter(np.array([0.0]))
        state = AdamState([p], lr=lr)
        for _ in range(2):
            adam_step([p], [np.array([1.0])], state)
        assert state.t == 2
        assert abs(p.data[0] - value) < 1e-12

    def test_minimizes_quadratic(self):
        p = parameter(np.array([3.0, -2.0]))
        state = AdamState([p], lr=0.01)
        for _ in range(3000):
            adam_step([p], [2.0 * p.data], state)
        np.testing.assert_allclose(p.data, 0.0, atol=0.05)

    def test_sparse_rows_leave_other_rows_untouched(self):
        p = parameter(np.arange(6, dtype=np.float64).reshape(3, 2))
        before = p.data.copy()
        state = AdamState([p], lr=0.1)
        adam_step([p], [np.ones((3, 2))], state, rows=np.array([1]))
        np.testing.assert_array_equal(p.data[[0, 2]], before[[0, 2]])
        assert np.all(p.data[1] < before[1])
        np.testing.assert_array_equal(state.m[0][[0, 2]], 0.0)

    def test_rejects_non_finite_gradient(self):
        p = parameter(np.ones(2))
        with pytest.raises(NonFiniteError):
            adam_step([p], [np.array([np.nan, 0.0])], AdamState([p]))

    def test_rejects_bad_lr(self):
        with pytest.raises(ValueError):
            AdamState([parameter(np.ones(1))], lr=0.0)


class TestUnitBall:
    def test_projects_long_rows_only(self):
        z = np.array([[3.0, 4.0], [0.3, 0.4]])
        out = project_unit_ball(z)
        np.testing.assert_allclose(out[0], [0.6, 0.8])
        np.testing.assert_array_equal(out[1], z[1])

    def test_vector(self):
        np.testing.assert_allclose(np.linalg.norm(project_unit_ball(np.full(9, 5.0))), 1.0)


class TestEgt1:
    def test_save_load(self, tmp_path, rng):
        array = rng.normal(size=(2, 3, 4))
        path = save_tensor(tmp_path / "t.egt", array)
        np.testing.assert_array_equal(load_tensor(path), array)

    def test_header_layout(self, tmp_path):
        path = save_tensor(tmp_path / "t.egt", np.zeros((2, 5)))
        raw = open(path, 'rb').read()
        assert raw[:4] == b"EGT1"
        assert raw[4:8] == (2).to_bytes(4, 'little')
        assert raw[8:12] == (2).to_bytes(4, 'little')
        assert raw[12:16] == (5).to_bytes(4, 'little')
        assert len(raw) == 16 + 8 * 10

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "bad.egt"
        path.write_bytes(b"NOPE" + bytes(8))
        with pytest.raises(FormatError) as excinfo:
            load_tensor(path)
        assert excinfo.value.offset == 0

    def test_truncated_payload(self, tmp_path):
        path = save_tensor(tmp_path / "t.egt", np.ones((4, 4)))
        raw = open(path, 'rb').read()
        with open(path, 'wb') as f:
            f.write(raw[:-8])
        with pytest.raises(FormatError):
            load_tensor(path)
