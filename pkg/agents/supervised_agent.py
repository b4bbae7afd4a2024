"""
Supervised Agent - Reference separators that bracket the semi-supervised methods.
Responsibilities:
- Constant baseline: the mixture itself is the estimate
- Supervised upper bound: a mask trained on true (y, b) pairs built from
  independent draws of both sources
"""

import logging
from typing import Any, Dict, List, Tuple

import numpy as np

from utils.errors import ShapeMismatchError
from utils.neural_models import MaskModel
from utils.training import flatten, predict_batched, train_mask

logger = logging.getLogger(__name__)


class SupervisedAgent:
    """Agent for the const baseline and the fully supervised mask."""

    def __init__(self, config: Dict[str, Any]):
        self.epochs = config.get('epochs', 25)
        self.lr = config.get('lr', 0.001)
        self.batch_size = config.get('batch_size', 32)
        self.resample_per_epoch = config.get('resample_per_epoch', True)
        self.seed = config.get('seed', 0)
        self.hidden = config.get('hidden')
        self.model: MaskModel = None
        self.losses: List[float] = []

    @staticmethod
    def const_estimate(mixtures: np.ndarray) -> np.ndarray:
        """x^ = y (and b^ = y)."""
        return np.array(mixtures, dtype=np.float64, copy=True)

    @staticmethod
    def make_pairs(observed_b: np.ndarray, sources_x: np.ndarray,
                   rng: np.random.Generator) -> Tuple[np.ndarray, np.ndarray]:
        """y = b + x with x drawn independently (with replacement) for every b."""
        if observed_b.shape[1:] != sources_x.shape[1:]:
            raise ShapeMismatchError(f"Observed {observed_b.shape[1:]} and X samples {sources_x.shape[1:]} differ")
        picks = rng.integers(0, len(sources_x), size=len(observed_b))
        return observed_b + sources_x[picks], observed_b.copy()

    def train(self, observed_b: np.ndarray, sources_x: np.ndarray) -> MaskModel:
        """
        Train the mask on true pairs.

        Args:
            observed_b: Stacked samples of the observed source
            sources_x: Stacked true samples of the unobserved source

        Returns:
            Trained mask model
        """
        if sources_x is None or len(sources_x) == 0:
            raise ValueError("Supervised training needs true samples of the unobserved source")
        rng = np.random.default_rng(self.seed)
        mixtures, targets = self.make_pairs(observed_b, sources_x, rng)

        resample = None
        if self.resample_per_epoch:
            def resample():
                y, b = self.make_pairs(observed_b, sources_x, rng)
                return flatten(y), flatten(b)

        self.model = MaskModel(int(np.prod(mixtures.shape[1:])), self.hidden, seed=self.seed, lr=self.lr)
        logger.info(f"Supervised mask: {len(mixtures)} pairs, {self.epochs} epochs")
        self.losses = train_mask(self.model, flatten(mixtures), flatten(targets), self.epochs, self.batch_size,
                                 rng, resample=resample, label='supervised')
        return self.model

    def masks(self, mixtures: np.ndarray) -> np.ndarray:
        if self.model is None:
            raise RuntimeError("Supervised mask must be trained first")
        return predict_batched(self.model, flatten(mixtures)).reshape(mixtures.shape)
