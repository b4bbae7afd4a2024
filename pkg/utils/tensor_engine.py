"""
Tensor engine - dense float64 arrays with reverse-mode autodiff.
Responsibilities:
- Tensor values and the closed differentiable op set
- Graph tracing, forward evaluation and backward accumulation
- Adam optimizer state and updates
- Unit-ball projection for latent codes
- EGT1 binary tensor files
"""

import logging
import struct
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from utils.errors import FormatError, NonFiniteError, ShapeMismatchError

logger = logging.getLogger(__name__)

EGT_MAGIC = b"EGT1"
SAFE_DIV_EPS = 1e-8

Scalar = Union[int, float]


def _checked(value: np.ndarray, op: str) -> np.ndarray:
    """Reject NaN/Inf produced by an operation."""
    if not np.all(np.isfinite(value)):
        raise NonFiniteError(f"Non-finite value produced by '{op}'")
    return value


class Tensor:
    """A float64 array node in the autodiff graph."""

    def __init__(self, data, requires_grad: bool = False, name: str = '',
                 _parents: Tuple['Tensor', ...] = (), _op: str = 'leaf'):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = requires_grad
        self.name = name
        self.grad: Optional[np.ndarray] = None
        self._parents = _parents
        self._op = _op
        self._backward: Callable[[], None] = lambda: None

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.data.shape

    def __repr__(self) -> str:
        label = f", name={self.name}" if self.name else ""
        return f"Tensor(shape={self.shape}, op={self._op}{label})"

    def _child(self, data: np.ndarray, parents: Tuple['Tensor', ...], op: str) -> 'Tensor':
        return Tensor(_checked(data, op),
                      requires_grad=any(p.requires_grad for p in parents),
                      _parents=parents, _op=op)

    def _accumulate(self, grad: np.ndarray) -> None:
        if not self.requires_grad:
            return
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad = self.grad + grad

    # -- elementwise arithmetic -------------------------------------------

    def __add__(self, other: Union['Tensor', Scalar]) -> 'Tensor':
        if not isinstance(other, Tensor):
            out = self._child(self.data + float(other), (self,), 'add_scalar')
            out._backward = lambda: self._accumulate(out.grad)
            return out

        if self.shape == other.shape:
            out = self._child(self.data + other.data, (self, other), 'add')

            def _backward():
                self._accumulate(out.grad)
                other._accumulate(out.grad)
            out._backward = _backward
            return out

        # Row-bias: (n, d) + (d,)
        if self.data.ndim == 2 and other.data.ndim == 1 and self.shape[1] == other.shape[0]:
            out = self._child(self.data + other.data, (self, other), 'add_bias')

            def _backward():
                self._accumulate(out.grad)
                other._accumulate(out.grad.sum(axis=0))
            out._backward = _backward
            return out

        raise ShapeMismatchError(f"Cannot add shapes {self.shape} and {other.shape}")

    def __radd__(self, other: Scalar) -> 'Tensor':
        return self + other

    def __neg__(self) -> 'Tensor':
        return self * -1.0

    def __sub__(self, other: Union['Tensor', Scalar]) -> 'Tensor':
        if isinstance(other, Tensor):
            return self + (-other)
        return self + (-float(other))

    def __rsub__(self, other: Scalar) -> 'Tensor':
        return (-self) + other

    def __mul__(self, other: Union['Tensor', Scalar]) -> 'Tensor':
        if not isinstance(other, Tensor):
            factor = float(other)
            out = self._child(self.data * factor, (self,), 'mul_scalar')
            out._backward = lambda: self._accumulate(out.grad * factor)
            return out

        if self.shape != other.shape:
            raise ShapeMismatchError(f"Cannot multiply shapes {self.shape} and {other.shape}")
        out = self._child(self.data * other.data, (self, other), 'mul')

        def _backward():
            self._accumulate(out.grad * other.data)
            other._accumulate(out.grad * self.data)
        out._backward = _backward
        return out

    def __rmul__(self, other: Scalar) -> 'Tensor':
        return self * other

    def __truediv__(self, other: Scalar) -> 'Tensor':
        if isinstance(other, Tensor):
            return safe_div(self, other)
        return self * (1.0 / float(other))

    def __matmul__(self, other: 'Tensor') -> 'Tensor':
        return matmul(self, other)

    # -- activations and reductions -------------------------------------------

    def relu(self) -> 'Tensor':
        out = self._child(np.maximum(self.data, 0.0), (self,), 'relu')
        out._backward = lambda: self._accumulate(out.grad * (self.data > 0.0))
        return out

    def sigmoid(self) -> 'Tensor':
        x = self.data
        # exp(-|x|) never overflows
        decay = np.exp(-np.abs(x))
        value = np.where(x >= 0, 1.0 / (1.0 + decay), decay / (1.0 + decay))
        out = self._child(value, (self,), 'sigmoid')
        out._backward = lambda: self._accumulate(out.grad * value * (1.0 - value))
        return out

    def sum(self) -> 'Tensor':
        out = self._child(np.asarray(self.data.sum()), (self,), 'sum')
        out._backward = lambda: self._accumulate(np.full_like(self.data, out.grad))
        return out

    def mean(self) -> 'Tensor':
        size = self.data.size
        out = self._child(np.asarray(self.data.mean()), (self,), 'mean')
        out._backward = lambda: self._accumulate(np.full_like(self.data, out.grad / size))
        return out


def parameter(data, name: str = '') -> Tensor:
    """Create a trainable leaf tensor (copied)."""
    return Tensor(np.array(data, dtype=np.float64), requires_grad=True, name=name)


def constant(data) -> Tensor:
    """Create a non-trainable leaf tensor."""
    return Tensor(data, requires_grad=False)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """2-D matrix product."""
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeMismatchError(f"Cannot matmul shapes {a.shape} and {b.shape}")
    out = a._child(a.data @ b.data, (a, b), 'matmul')

    def _backward():
        a._accumulate(out.grad @ b.data.T)
        b._accumulate(a.data.T @ out.grad)
    out._backward = _backward
    return out


def safe_div(a: Tensor, b: Tensor, eps: float = SAFE_DIV_EPS) -> Tensor:
    """Elementwise a / (b + eps)."""
    if a.shape != b.shape:
        raise ShapeMismatchError(f"Cannot divide shapes {a.shape} and {b.shape}")
    denom = b.data + eps
    out = a._child(a.data / denom, (a, b), 'safe_div')

    def _backward():
        a._accumulate(out.grad / denom)
        b._accumulate(-out.grad * a.data / (denom * denom))
    out._backward = _backward
    return out


def l1_loss(a: Tensor, b: Tensor) -> Tensor:
    """Mean absolute error. Subgradient at ties is 0."""
    if a.shape != b.shape:
        raise ShapeMismatchError(f"L1 needs equal shapes, got {a.shape} and {b.shape}")
    diff = a.data - b.data
    size = diff.size
    out = a._child(np.asarray(np.abs(diff).mean()), (a, b), 'l1')

    def _backward():
        sign = np.sign(diff) * (out.grad / size)
        a._accumulate(sign)
        b._accumulate(-sign)
    out._backward = _backward
    return out


def mse_loss(a: Tensor, b: Tensor) -> Tensor:
    """Mean squared error."""
    if a.shape != b.shape:
        raise ShapeMismatchError(f"MSE needs equal shapes, got {a.shape} and {b.shape}")
    diff = a.data - b.data
    size = diff.size
    out = a._child(np.asarray((diff * diff).mean()), (a, b), 'mse')

    def _backward():
        grad = diff * (2.0 * out.grad / size)
        a._accumulate(grad)
        b._accumulate(-grad)
    out._backward = _backward
    return out


class Graph:
    """
    A traced computation.

    The callable receives named input tensors and returns the root tensor.
    Each forward call re-traces, caching the topologically ordered nodes
    that backward walks in reverse.
    """

    def __init__(self, fn: Callable[..., Tensor]):
        self.fn = fn
        self.root: Optional[Tensor] = None
        self.nodes: List[Tensor] = []

    def _trace(self, root: Tensor) -> List[Tensor]:
        order: List[Tensor] = []
        visited = set()
        stack = [(root, False)]

        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for parent in reversed(node._parents):
                if id(parent) not in visited:
                    stack.append((parent, False))

        return order

    def leaves(self) -> List[Tensor]:
        """Trainable leaves reached by the last forward pass."""
        return [n for n in self.nodes if not n._parents and n.requires_grad]


def forward(graph: Graph, inputs: Dict[str, Tensor]) -> Tensor:
    """
    Evaluate the graph on named inputs.

    Args:
        graph: Graph to evaluate
        inputs: Named input tensors bound to the graph callable

    Returns:
        Root tensor, with all intermediate nodes cached on the graph
    """
    root = graph.fn(**inputs)
    if not isinstance(root, Tensor):
        raise ShapeMismatchError(f"Graph must return a Tensor, got {type(root).__name__}")
    _checked(root.data, 'forward')
    graph.root = root
    graph.nodes = graph._trace(root)
    return root


def backward(graph: Graph) -> Dict[Tensor, np.ndarray]:
    """
    Reverse-mode accumulation from a scalar root.

    Returns:
        Gradient of the root with respect to every trainable leaf
    """
    root = graph.root
    if root is None:
        raise RuntimeError("backward called before forward")
    if root.data.size != 1:
        raise ShapeMismatchError(f"Backward needs a scalar root, got shape {root.shape}")

    for node in graph.nodes:
        node.grad = None
    root.grad = np.ones_like(root.data)

    for node in reversed(graph.nodes):
        if node.grad is not None and node.requires_grad:
            node._backward()

    grads = {}
    for leaf in graph.leaves():
        grads[leaf] = leaf.grad if leaf.grad is not None else np.zeros_like(leaf.data)
    return grads


class AdamState:
    """First/second moments per parameter plus the shared step counter."""

    def __init__(self, params: Sequence[Tensor], lr: float = 0.001, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8):
        if lr <= 0:
            raise ValueError(f"Adam learning rate must be positive, got {lr}")
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = [np.zeros_like(p.data) for p in params]
        self.v = [np.zeros_like(p.data) for p in params]


def adam_step(params: Sequence[Tensor], grads: Sequence[Optional[np.ndarray]], state: AdamState,
              rows: Optional[np.ndarray] = None) -> Tuple[Sequence[Tensor], AdamState]:
    """
    Apply one bias-corrected Adam update in place of params.

    Args:
        params: Parameter tensors (same order the state was built with)
        grads: Gradients aligned with params; None means zero
        state: Optimizer state, mutated
        rows: Optional row indices; when given only those rows of each
            (2-D) parameter and its moments are updated

    Returns:
        The params and the state
    """
    if len(params) != len(state.m):
        raise ShapeMismatchError(f"Adam state tracks {len(state.m)} params, got {len(params)}")

    state.t += 1
    correction1 = 1.0 - state.beta1 ** state.t
    correction2 = 1.0 - state.beta2 ** state.t

    for index, (param, grad) in enumerate(zip(params, grads)):
        if grad is None:
            grad = np.zeros_like(param.data)
        if grad.shape != param.shape:
            raise ShapeMismatchError(f"Gradient shape {grad.shape} does not match parameter {param.shape}")
        if not np.all(np.isfinite(grad)):
            raise NonFiniteError(f"Non-finite gradient for parameter {param.name or index}")

        m, v = state.m[index], state.v[index]
        data = param.data.copy()
        if rows is None:
            m[...] = state.beta1 * m + (1.0 - state.beta1) * grad
            v[...] = state.beta2 * v + (1.0 - state.beta2) * grad * grad
            data -= state.lr * (m / correction1) / (np.sqrt(v / correction2) + state.eps)
        else:
            g = grad[rows]
            m[rows] = state.beta1 * m[rows] + (1.0 - state.beta1) * g
            v[rows] = state.beta2 * v[rows] + (1.0 - state.beta2) * g * g
            data[rows] -= state.lr * (m[rows] / correction1) / (np.sqrt(v[rows] / correction2) + state.eps)
        param.data = data

    return params, state


def project_unit_ball(z: np.ndarray) -> np.ndarray:
    """
    Project onto the closed unit ball.

    Vectors are projected whole; 2-D arrays are projected row by row.
    """
    z = np.asarray(z, dtype=np.float64)
    if z.ndim == 1:
        norm = np.linalg.norm(z)
        return z / norm if norm > 1.0 else z.copy()
    norms = np.linalg.norm(z, axis=-1, keepdims=True)
    return np.where(norms > 1.0, z / np.maximum(norms, 1.0), z)


def save_tensor(path: Union[str, Path], array: np.ndarray) -> str:
    """
    Write an EGT1 file: magic, u32 rank, u32 extents, f64 payload (little-endian).

    Returns:
        Path to the written file
    """
    array = np.ascontiguousarray(array, dtype='<f8')
    output_file = Path(path)
    output_file.parent.mkdir(parents=True, exist_ok=True)

    header = EGT_MAGIC + struct.pack('<I', array.ndim) + struct.pack(f'<{array.ndim}I', *array.shape)
    with open(output_file, 'wb') as f:
        f.write(header)
        f.write(array.tobytes())

    return str(output_file)


def load_tensor(path: Union[str, Path]) -> np.ndarray:
    """Read an EGT1 file written by save_tensor."""
    raw = Path(path).read_bytes()

    if raw[:4] != EGT_MAGIC:
        raise FormatError("Bad EGT1 magic", path=str(path), offset=0)
    if len(raw) < 8:
        raise FormatError("Truncated EGT1 header", path=str(path), offset=len(raw))

    rank = struct.unpack_from('<I', raw, 4)[0]
    extents_end = 8 + 4 * rank
    if len(raw) < extents_end:
        raise FormatError("Truncated EGT1 extents", path=str(path), offset=len(raw))
    shape = struct.unpack_from(f'<{rank}I', raw, 8)

    expected = extents_end + 8 * int(np.prod(shape, dtype=np.int64))
    if len(raw) != expected:
        raise FormatError(f"EGT1 payload size mismatch (expected {expected} bytes, found {len(raw)})",
                          path=str(path), offset=min(len(raw), expected))

    return np.frombuffer(raw, dtype='<f8', offset=extents_end).reshape(shape).astype(np.float64)
