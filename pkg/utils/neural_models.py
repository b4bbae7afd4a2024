"""
Neural models for masking and generative separation.

Fully-connected networks built on utils.tensor_engine: the masking network,
per-source generators with latent code tables, and the spectrally
normalized discriminator used by adversarial masking.
"""

import json
import logging
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from utils.errors import ShapeMismatchError
from utils.tensor_engine import (
    AdamState,
    Tensor,
    adam_step,
    constant,
    load_tensor,
    matmul,
    parameter,
    project_unit_ball,
    save_tensor,
)

logger = logging.getLogger(__name__)

DEFAULT_MASK_HIDDEN = [512, 512]
DEFAULT_GENERATOR_HIDDEN = [256, 512]
DEFAULT_DISCRIMINATOR_HIDDEN = [512, 256]
DEFAULT_LATENT_DIM = 64
DEFAULT_SPECTRAL_REFINE = 50


def xavier_uniform(fan_in: int, fan_out: int, rng: np.random.Generator) -> np.ndarray:
    """Uniform(-sqrt(6/(fan_in+fan_out)), +sqrt(6/(fan_in+fan_out)))."""
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_in, fan_out))


class DenseNetwork:
    """
    Stack of dense layers with relu between them and a configurable head.

    Weights are (fan_in, fan_out) so a batch (n, fan_in) maps to (n, fan_out).
    """

    kind = 'dense'

    def __init__(self, widths: Sequence[int], output_activation: str, seed: int, lr: float = 0.001):
        if len(widths) < 2 or any(w <= 0 for w in widths):
            raise ValueError(f"Invalid layer widths {list(widths)}")
        self.widths = [int(w) for w in widths]
        self.output_activation = output_activation
        self.seed = seed

        rng = np.random.default_rng(seed)
        self.weights: List[Tensor] = []
        self.biases: List[Tensor] = []
        for index, (fan_in, fan_out) in enumerate(zip(self.widths[:-1], self.widths[1:])):
            self.weights.append(parameter(xavier_uniform(fan_in, fan_out, rng), name=f"W{index}"))
            self.biases.append(parameter(np.zeros(fan_out), name=f"b{index}"))

        self.optimizer = AdamState(self.parameters(), lr=lr)

    def parameters(self) -> List[Tensor]:
        params = []
        for weight, bias in zip(self.weights, self.biases):
            params.extend([weight, bias])
        return params

    def _layer_weight(self, index: int) -> Tensor:
        return self.weights[index]

    def _head(self, z: Tensor) -> Tensor:
        if self.output_activation == 'sigmoid':
            return z.sigmoid()
        return z

    def forward(self, x: Tensor) -> Tensor:
        if x.data.ndim != 2 or x.shape[1] != self.widths[0]:
            raise ShapeMismatchError(f"{self.kind} expects (n, {self.widths[0]}) input, got {x.shape}")
        h = x
        last = len(self.weights) - 1
        for index, bias in enumerate(self.biases):
            h = matmul(h, self._layer_weight(index)) + bias
            if index < last:
                h = h.relu()
        return self._head(h)

    def predict(self, x: np.ndarray) -> np.ndarray:
        """Forward pass on a numpy batch with no graph kept."""
        return self.forward(constant(x)).data

    def step(self, grads: Dict[Tensor, np.ndarray]) -> None:
        """Adam update of every parameter from a backward() result."""
        params = self.parameters()
        adam_step(params, [grads.get(p) for p in params], self.optimizer)

    def manifest(self) -> Dict[str, Any]:
        return {
            'kind': self.kind,
            'widths': self.widths,
            'activations': ['relu'] * (len(self.weights) - 1) + [self.output_activation],
            'seed': self.seed,
            'layers': [{'weight': list(w.shape), 'bias': list(b.shape)}
                       for w, b in zip(self.weights, self.biases)],
        }


class MaskModel(DenseNetwork):
    """Masking network m(y): flattened sample in, sigmoid mask of the same size out."""

    kind = 'mask'

    def __init__(self, input_dim: int, hidden: Optional[Sequence[int]] = None, seed: int = 0, lr: float = 0.001):
        hidden = DEFAULT_MASK_HIDDEN if hidden is None else hidden
        super().__init__([input_dim, *hidden, input_dim], 'sigmoid', seed, lr)


class GeneratorModel(DenseNetwork):
    """Generator G(z): latent code in, non-negative sample out (sigmoid scaled to value_range)."""

    kind = 'generator'

    def __init__(self, latent_dim: int, output_dim: int, hidden: Optional[Sequence[int]] = None,
                 value_range: float = 1.0, seed: int = 0, lr: float = 0.001):
        hidden = DEFAULT_GENERATOR_HIDDEN if hidden is None else hidden
        self.value_range = float(value_range)
        super().__init__([latent_dim, *hidden, output_dim], 'sigmoid', seed, lr)

    @property
    def latent_dim(self) -> int:
        return self.widths[0]

    def _head(self, z: Tensor) -> Tensor:
        out = z.sigmoid()
        return out * self.value_range if self.value_range != 1.0 else out

    def manifest(self) -> Dict[str, Any]:
        manifest = super().manifest()
        manifest['value_range'] = self.value_range
        return manifest


class DiscriminatorModel(DenseNetwork):
    """
    Discriminator with spectral normalization on every weight matrix.

    The normalizing constant is treated as fixed during backward; the
    persistent power-iteration vectors live in self.u.
    """

    kind = 'discriminator'

    def __init__(self, input_dim: int, hidden: Optional[Sequence[int]] = None, seed: int = 0,
                 lr: float = 0.001, power_iters: int = 1, spectral_refine: int = DEFAULT_SPECTRAL_REFINE):
        hidden = DEFAULT_DISCRIMINATOR_HIDDEN if hidden is None else hidden
        super().__init__([input_dim, *hidden, 1], 'linear', seed, lr)
        self.power_iters = power_iters
        self.spectral_refine = spectral_refine
        rng = np.random.default_rng(seed + 1)
        self.u = [_unit(rng.normal(size=w.shape[0])) for w in self.weights]
        self.sigmas = [1.0 for _ in self.weights]

    def _layer_weight(self, index: int) -> Tensor:
        weight = self.weights[index]
        _, self.u[index], sigma = spectral_normalize(weight.data, self.u[index], self.power_iters,
                                                     max_refine=self.spectral_refine)
        self.sigmas[index] = sigma
        return weight * (1.0 / sigma)

    def normalized_weights(self) -> List[np.ndarray]:
        """The weight matrices exactly as the last forward pass used them."""
        return [w.data / s for w, s in zip(self.weights, self.sigmas)]


class LatentTable:
    """Per-sample latent codes kept inside the unit ball, with their own Adam state."""

    def __init__(self, count: int, latent_dim: int, seed: int, lr: float = 0.001,
                 init_std: Optional[float] = None):
        rng = np.random.default_rng(seed)
        std = 0.1 / np.sqrt(latent_dim) if init_std is None else init_std
        self.codes = project_unit_ball(rng.normal(0.0, std, size=(count, latent_dim)))
        self._param = parameter(self.codes, name='codes')
        self.optimizer = AdamState([self._param], lr=lr)

    def __len__(self) -> int:
        return self.codes.shape[0]

    @property
    def latent_dim(self) -> int:
        return self.codes.shape[1]

    def assign(self, rows: np.ndarray, values: np.ndarray) -> None:
        self.codes[rows] = project_unit_ball(values)
        self._param.data = self.codes

    def batch(self, rows: np.ndarray) -> Tensor:
        """Leaf tensor holding the selected codes; its grad feeds step()."""
        return parameter(self.codes[rows])

    def step(self, rows: np.ndarray, grad: np.ndarray) -> None:
        """Sparse Adam update of the selected rows followed by projection."""
        rows = np.asarray(rows)
        full_grad = np.zeros_like(self.codes)
        np.add.at(full_grad, rows, grad)
        unique_rows = np.unique(rows)
        self._param.data = self.codes
        adam_step([self._param], [full_grad], self.optimizer, rows=unique_rows)
        updated = self._param.data
        updated[unique_rows] = project_unit_ball(updated[unique_rows])
        self.codes = updated
        self._param.data = self.codes


def _unit(v: np.ndarray, eps: float = 1e-12) -> np.ndarray:
    return v / (np.linalg.norm(v) + eps)


def spectral_normalize(weight: np.ndarray, u: Optional[np.ndarray] = None, power_iters: int = 1,
                       refine_tol: float = 1e-6, max_refine: int = DEFAULT_SPECTRAL_REFINE
                       ) -> Tuple[np.ndarray, np.ndarray, float]:
    """
    Divide a weight matrix by its power-iteration spectral norm estimate.

    Runs power_iters iterations from the persistent vector u, then up to
    max_refine extra iterations while the estimate still moves by more
    than refine_tol relative. The extra iterations keep the normalized
    spectral norm within 1e-3 of one right after a large weight update;
    they usually stop after a handful of iterations once u has settled,
    but a forward pass can cost up to power_iters + max_refine matrix
    products per layer. max_refine=0 gives the plain one-iteration-per-step
    estimate.

    Args:
        weight: 2-D weight (rows = fan_in)
        u: Persistent left vector of length weight.shape[0]; random when None
        power_iters: Minimum number of power iterations
        refine_tol: Relative change of sigma that ends the refinement
        max_refine: Cap on iterations beyond power_iters

    Returns:
        (normalized weight, updated u, sigma estimate)
    """
    if weight.ndim != 2:
        raise ShapeMismatchError(f"Spectral norm needs a 2-D weight, got shape {weight.shape}")
    if u is None:
        u = _unit(np.random.default_rng(0).normal(size=weight.shape[0]))

    power_iters = max(power_iters, 1)
    sigma = 0.0
    for iteration in range(power_iters + max(max_refine, 0)):
        v = _unit(weight.T @ u)
        u = _unit(weight @ v)
        previous, sigma = sigma, float(u @ weight @ v)
        if iteration + 1 >= power_iters and abs(sigma - previous) <= refine_tol * max(abs(sigma), 1e-12):
            break

    if sigma <= 0.0:
        return weight.copy(), u, 1.0
    return weight / sigma, u, sigma


def mask_apply(y: np.ndarray, m: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """
    Split a mixture with a mask: b_hat = y * m, x_hat = y - b_hat.

    Returns:
        (b_hat, x_hat) with b_hat + x_hat == y exactly
    """
    y = np.asarray(y, dtype=np.float64)
    m = np.asarray(m, dtype=np.float64)
    if y.shape != m.shape:
        raise ShapeMismatchError(f"Mask shape {m.shape} does not match mixture shape {y.shape}")
    if np.any(m < 0.0) or np.any(m > 1.0):
        raise ValueError(f"Mask out of [0, 1] range (min={m.min():.4g}, max={m.max():.4g})")
    b_hat = y * m
    return b_hat, y - b_hat


def init_model(kind: str, shape_config: Dict[str, Any], seed: int) -> DenseNetwork:
    """
    Build a freshly initialized model.

    Args:
        kind: 'mask', 'generator' or 'discriminator'
        shape_config: input_dim / output_dim / latent_dim / hidden / value_range / lr
            (discriminators also read power_iters and spectral_refine)
        seed: Weight initialization seed

    Returns:
        Model with Xavier-uniform weights and zero biases
    """
    lr = shape_config.get('lr', 0.001)
    hidden = shape_config.get('hidden')
    if kind == 'mask':
        return MaskModel(shape_config['input_dim'], hidden, seed=seed, lr=lr)
    if kind == 'generator':
        return GeneratorModel(shape_config.get('latent_dim', DEFAULT_LATENT_DIM), shape_config['output_dim'],
                              hidden, value_range=shape_config.get('value_range', 1.0), seed=seed, lr=lr)
    if kind == 'discriminator':
        return DiscriminatorModel(shape_config['input_dim'], hidden, seed=seed, lr=lr,
                                  power_iters=shape_config.get('power_iters', 1),
                                  spectral_refine=shape_config.get('spectral_refine', DEFAULT_SPECTRAL_REFINE))
    raise ValueError(f"Unknown model kind: {kind}")


def save_model(model: DenseNetwork, directory: Union[str, Path]) -> str:
    """Write a checkpoint directory: one EGT1 file per tensor plus manifest.json."""
    output_dir = Path(directory)
    output_dir.mkdir(parents=True, exist_ok=True)

    for index, (weight, bias) in enumerate(zip(model.weights, model.biases)):
        save_tensor(output_dir / f"W{index}.egt", weight.data)
        save_tensor(output_dir / f"b{index}.egt", bias.data)

    with open(output_dir / "manifest.json", 'w', encoding='utf-8') as f:
        json.dump(model.manifest(), f, indent=2, sort_keys=True)

    logger.debug(f"Saved {model.kind} checkpoint to {output_dir}")
    return str(output_dir)


def load_model(directory: Union[str, Path]) -> DenseNetwork:
    """Rebuild a model from a checkpoint directory written by save_model."""
    input_dir = Path(directory)
    with open(input_dir / "manifest.json", 'r', encoding='utf-8') as f:
        manifest = json.load(f)

    widths = manifest['widths']
    kind = manifest['kind']
    if kind == 'mask':
        model = MaskModel(widths[0], widths[1:-1], seed=manifest['seed'])
    elif kind == 'generator':
        model = GeneratorModel(widths[0], widths[-1], widths[1:-1],
                               value_range=manifest.get('value_range', 1.0), seed=manifest['seed'])
    elif kind == 'discriminator':
        model = DiscriminatorModel(widths[0], widths[1:-1], seed=manifest['seed'])
    else:
        raise ValueError(f"Unknown checkpoint kind: {kind}")

    for index, (weight, bias) in enumerate(zip(model.weights, model.biases)):
        weight.data = load_tensor(input_dir / f"W{index}.egt")
        bias.data = load_tensor(input_dir / f"b{index}.egt")
    return model
