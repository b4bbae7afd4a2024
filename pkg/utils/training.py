"""
Shared training loops for masking networks.
"""

import logging
from typing import Callable, List, Optional, Tuple

import numpy as np

from utils.errors import DivergenceError, NonFiniteError
from utils.neural_models import DenseNetwork, MaskModel
from utils.tensor_engine import Graph, backward, constant, forward, l1_loss

logger = logging.getLogger(__name__)

PairSource = Callable[[], Tuple[np.ndarray, np.ndarray]]


def flatten(samples: np.ndarray) -> np.ndarray:
    """(n, *shape) -> (n, prod(shape))"""
    return samples.reshape(samples.shape[0], -1)


def minibatches(count: int, batch_size: int, rng: np.random.Generator) -> List[np.ndarray]:
    """Shuffled index batches covering every sample once."""
    order = rng.permutation(count)
    return [order[start:start + batch_size] for start in range(0, count, batch_size)]


def predict_batched(model: DenseNetwork, inputs: np.ndarray, batch_size: int = 256) -> np.ndarray:
    """Forward a (n, d) array through a model in chunks."""
    outputs = [model.predict(inputs[start:start + batch_size]) for start in range(0, inputs.shape[0], batch_size)]
    return np.concatenate(outputs, axis=0) if outputs else np.zeros((0, model.widths[-1]))


def masked_l1_graph(model: MaskModel) -> Graph:
    """Graph of mean L1(y * m(y), b)."""
    return Graph(lambda y, b: l1_loss(y * model.forward(y), b))


def train_mask(model: MaskModel, mixtures: np.ndarray, targets: np.ndarray, epochs: int,
               batch_size: int, rng: np.random.Generator, resample: Optional[PairSource] = None,
               label: str = 'mask') -> List[float]:
    """
    Fit a masking network on (mixture, observed source) pairs with Adam.

    Args:
        model: Mask model, updated in place
        mixtures: (n, d) inputs
        targets: (n, d) observed-source targets
        epochs: Number of passes over the pairs
        batch_size: Minibatch size
        rng: Generator driving shuffling
        resample: Optional callable returning fresh (mixtures, targets) at the start of every epoch after the first

    Returns:
        Mean training loss per epoch
    """
    if epochs < 1:
        raise ValueError(f"epochs must be >= 1, got {epochs}")
    if mixtures.shape != targets.shape or mixtures.shape[0] == 0:
        raise ValueError(f"Need matching non-empty pairs, got {mixtures.shape} and {targets.shape}")

    graph = masked_l1_graph(model)
    trace = []

    for epoch in range(epochs):
        if resample is not None and epoch > 0:
            mixtures, targets = resample()

        batch_losses = []
        for rows in minibatches(mixtures.shape[0], batch_size, rng):
            try:
                loss = forward(graph, {'y': constant(mixtures[rows]), 'b': constant(targets[rows])})
                model.step(backward(graph))
            except NonFiniteError as e:
                raise DivergenceError(f"{label} training diverged at epoch {epoch + 1}: {e}") from e
            batch_losses.append(float(loss.data))

        epoch_loss = float(np.mean(batch_losses))
        if not np.isfinite(epoch_loss):
            raise DivergenceError(f"{label} training loss is non-finite at epoch {epoch + 1}")
        trace.append(epoch_loss)
        logger.debug(f"{label} epoch {epoch + 1}/{epochs}: loss={epoch_loss:.6f}")

    return trace
