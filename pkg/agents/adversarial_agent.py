"""
Adversarial Agent - Adversarial Masking (AM) baseline.
Responsibilities:
- Train a mask so that masked mixtures look like observed samples to an
  LS-GAN discriminator with spectrally normalized weights
- Apply the magnitude prior L1(m(y), 1) to the mask objective
"""

import logging
from typing import Any, Dict, List, Tuple

import numpy as np

from utils.errors import DivergenceError, NonFiniteError
from utils.neural_models import DEFAULT_SPECTRAL_REFINE, DiscriminatorModel, MaskModel
from utils.tensor_engine import Graph, backward, constant, forward, l1_loss, mse_loss
from utils.training import flatten, minibatches, predict_batched

logger = logging.getLogger(__name__)


class AdversarialAgent:
    """Agent training the AM mask against a discriminator."""

    def __init__(self, config: Dict[str, Any]):
        self.epochs = config.get('epochs', 25)
        self.mask_lr = config.get('mask_lr', 0.001)
        self.disc_lr = config.get('disc_lr', 0.001)
        self.prior_weight = config.get('prior_weight', 0.1)
        self.batch_size = config.get('batch_size', 32)
        self.power_iters = config.get('power_iters', 1)
        self.spectral_refine = config.get('spectral_refine', DEFAULT_SPECTRAL_REFINE)
        self.seed = config.get('seed', 0)
        self.mask_hidden = config.get('mask_hidden')
        self.disc_hidden = config.get('disc_hidden')

        if self.prior_weight < 0:
            raise ValueError(f"prior_weight must be >= 0, got {self.prior_weight}")

        self.mask_model: MaskModel = None
        self.discriminator: DiscriminatorModel = None
        self.history: Dict[str, List[float]] = {'disc_loss': [], 'mask_loss': []}

    @staticmethod
    def ls_losses(d_fake: np.ndarray, d_real: np.ndarray) -> Tuple[float, float]:
        """
        Least-squares GAN losses from discriminator outputs.

        Returns:
            (discriminator loss mean(D(fake)^2) + mean((D(real) - 1)^2),
             mask loss mean((D(fake) - 1)^2))
        """
        d_fake = np.asarray(d_fake, dtype=np.float64)
        d_real = np.asarray(d_real, dtype=np.float64)
        disc = float(np.mean(d_fake ** 2) + np.mean((d_real - 1.0) ** 2))
        mask = float(np.mean((d_fake - 1.0) ** 2))
        return disc, mask

    def _graphs(self) -> Tuple[Graph, Graph]:
        disc, mask = self.discriminator, self.mask_model

        def disc_objective(fake, real):
            d_fake = disc.forward(fake)
            d_real = disc.forward(real)
            return mse_loss(d_fake, constant(np.zeros(d_fake.shape))) + \
                mse_loss(d_real, constant(np.ones(d_real.shape)))

        def mask_objective(y):
            m = mask.forward(y)
            d_fake = disc.forward(y * m)
            adversarial = mse_loss(d_fake, constant(np.ones(d_fake.shape)))
            if self.prior_weight == 0:
                return adversarial
            return adversarial + l1_loss(m, constant(np.ones(m.shape))) * self.prior_weight

        return Graph(disc_objective), Graph(mask_objective)

    def train(self, observed_b: np.ndarray, mixtures: np.ndarray) -> MaskModel:
        """
        Alternate one discriminator step and one mask step per minibatch.

        Args:
            observed_b: Stacked observed samples
            mixtures: Stacked training mixtures

        Returns:
            Trained mask model
        """
        if len(observed_b) == 0 or len(mixtures) == 0:
            raise ValueError("AM needs non-empty observed samples and mixtures")
        real = flatten(observed_b)
        data = flatten(mixtures)
        dim = data.shape[1]

        self.mask_model = MaskModel(dim, self.mask_hidden, seed=self.seed, lr=self.mask_lr)
        self.discriminator = DiscriminatorModel(dim, self.disc_hidden, seed=self.seed + 1, lr=self.disc_lr,
                                                power_iters=self.power_iters, spectral_refine=self.spectral_refine)
        disc_graph, mask_graph = self._graphs()
        rng = np.random.default_rng(self.seed + 2)

        logger.info(f"AM: {self.epochs} epochs, {len(data)} mixtures vs {len(real)} observed, "
                    f"prior weight {self.prior_weight}")
        for epoch in range(1, self.epochs + 1):
            disc_losses, mask_losses = [], []
            for rows in minibatches(len(data), self.batch_size, rng):
                y = data[rows]
                b = real[rng.integers(0, len(real), size=len(rows))]
                try:
                    fake = y * self.mask_model.predict(y)
                    d_loss = forward(disc_graph, {'fake': constant(fake), 'real': constant(b)})
                    self.discriminator.step(backward(disc_graph))

                    m_loss = forward(mask_graph, {'y': constant(y)})
                    self.mask_model.step(backward(mask_graph))
                except NonFiniteError as e:
                    raise DivergenceError(f"AM diverged at epoch {epoch}: {e}") from e
                disc_losses.append(float(d_loss.data))
                mask_losses.append(float(m_loss.data))

            self.history['disc_loss'].append(float(np.mean(disc_losses)))
            self.history['mask_loss'].append(float(np.mean(mask_losses)))
            if not np.isfinite(self.history['mask_loss'][-1]):
                raise DivergenceError(f"AM mask loss is non-finite at epoch {epoch}")
            logger.debug(f"AM epoch {epoch}: D={self.history['disc_loss'][-1]:.5f} "
                         f"mask={self.history['mask_loss'][-1]:.5f}")

        return self.mask_model

    def masks(self, mixtures: np.ndarray) -> np.ndarray:
        """m_AM(y) for stacked mixtures, in sample shape."""
        if self.mask_model is None:
            raise RuntimeError("AM must be trained first")
        return predict_batched(self.mask_model, flatten(mixtures)).reshape(mixtures.shape)

    def init_for_nes(self, mixtures: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        """NES initial estimates x^0 = y * (1 - m_AM(y))."""
        mask = self.masks(mixtures)
        return mixtures * (1.0 - mask), mask
