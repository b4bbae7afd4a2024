"""Tests for GLO training, latent mixtures and LMM masks."""

import numpy as np
import pytest

from agents.latent_mixture_agent import LatentMixtureAgent
from utils.neural_models import GeneratorModel, LatentTable
from utils.synthetic_data import gen_synthetic
from utils.tensor_engine import Graph, backward, constant, forward, l1_loss
from utils.training import flatten


@pytest.fixture
def blobs():
    return gen_synthetic({'family': 'blobs', 'shape': [6, 6], 'n_b': 24, 'n_y': 20, 'n_eval': 5, 'seed': 2})


def small_agent(**overrides):
    config = {'latent_dim': 4, 'hidden': [16], 'stage1_epochs': 3, 'stage2_epochs': 3,
              'inference_steps': 5, 'batch_size': 8, 'seed': 9, **overrides}
    return LatentMixtureAgent(config)


def norms(codes):
    return np.linalg.norm(codes, axis=1)


def observed_only_fit(agent, data, steps):
    """Mean L1 of the best code fit of flattened mixtures through G_B alone."""
    rows = np.arange(len(data))
    codes = LatentTable(len(data), agent.latent_dim, seed=0, lr=0.01)
    codes.assign(rows, agent._nearest_codes(data))
    graph = Graph(lambda z, y: l1_loss(agent.generator_b.forward(z), y))
    best = np.inf
    for _ in range(steps):
        z = codes.batch(rows)
        loss = forward(graph, {'z': z, 'y': constant(data)})
        best = min(best, float(loss.data))
        codes.step(rows, backward(graph)[z])
    return best


class TestTraining:
    def test_glo_codes_in_unit_ball(self, blobs):
        agent = small_agent()
        trace = agent.train_glo(blobs.observed_b)
        assert len(trace) == 3
        assert np.all(norms(agent.codes_b.codes) <= 1.0 + 1e-12)

    def test_glo_loss_decreases(self, blobs):
        agent = small_agent(stage1_epochs=40, lr=0.01)
        trace = agent.train_glo(blobs.observed_b)
        assert trace[-1] < trace[0]

    def test_glo_memorizes_a_single_sample(self):
        sample = np.linspace(0.2, 0.8, 36).reshape(1, 6, 6)
        agent = small_agent(stage1_epochs=6000, lr=0.001, batch_size=1)
        trace = agent.train_glo(sample)
        assert trace[-1] < 1e-3

    def test_stage2_beats_observed_generator_alone(self):
        bars = gen_synthetic({'family': 'bars', 'shape': [6, 6], 'n_b': 24, 'n_y': 20, 'n_eval': 2, 'seed': 4})
        agent = small_agent(stage1_epochs=60, stage2_epochs=200, lr=0.01)
        agent.fit(bars.observed_b, bars.mixtures_y)

        data = flatten(bars.mixtures_y)
        estimates = agent.training_estimates()
        mixture_fit = np.abs(estimates.b_tilde + estimates.x_tilde - data).mean()
        assert mixture_fit < observed_only_fit(agent, data, steps=500)

    def test_stage2_freezes_observed_generator(self, blobs):
        agent = small_agent()
        agent.train_glo(blobs.observed_b)
        frozen = [p.data.copy() for p in agent.generator_b.parameters()]
        agent.train_stage2(blobs.mixtures_y)
        agent.infer(blobs.eval_y)
        for before, param in zip(frozen, agent.generator_b.parameters()):
            np.testing.assert_array_equal(before, param.data)
        assert np.all(norms(agent.codes_mix_b.codes) <= 1.0 + 1e-12)
        assert np.all(norms(agent.codes_mix_x.codes) <= 1.0 + 1e-12)

    def test_stage2_needs_stage1(self, blobs):
        with pytest.raises(RuntimeError):
            small_agent().train_stage2(blobs.mixtures_y)

    def test_infer_needs_training(self, blobs):
        with pytest.raises(RuntimeError):
            small_agent().infer(blobs.eval_y)

    def test_stage2_codes_start_from_nearest_observed(self, blobs):
        agent = small_agent(stage2_epochs=1)
        agent.train_glo(blobs.observed_b)
        mixtures = agent.to_working(blobs.observed_b[:4])
        nearest = agent._nearest_codes(mixtures.reshape(4, -1))
        np.testing.assert_array_equal(nearest, agent.codes_b.codes[:4])

    def test_training_estimates(self, blobs):
        agent = small_agent()
        agent.fit(blobs.observed_b, blobs.mixtures_y)
        estimates = agent.training_estimates()
        assert estimates.b_tilde.shape == (20, 36)
        assert np.all(estimates.x_tilde >= 0)


class TestInference:
    def test_plant_and_recover(self):
        agent = small_agent(code_lr=0.01)
        agent.generator_b = GeneratorModel(4, 6, [8], seed=1)
        agent.generator_x = GeneratorModel(4, 6, [8], seed=2)
        rng = np.random.default_rng(0)
        z_b = rng.normal(size=(5, 4)) * 0.2
        z_x = rng.normal(size=(5, 4)) * 0.2
        mixtures = agent.generator_b.predict(z_b) + agent.generator_x.predict(z_x)

        estimates = agent.infer(mixtures, steps=2000)
        assert estimates.loss < 2e-2
        assert np.all(norms(estimates.z_b) <= 1.0 + 1e-12)

    def test_inference_is_deterministic(self, blobs):
        agent = small_agent()
        agent.fit(blobs.observed_b, blobs.mixtures_y)
        first = agent.infer(blobs.eval_y)
        second = agent.infer(blobs.eval_y)
        np.testing.assert_array_equal(first.x_tilde, second.x_tilde)


class TestMasks:
    def test_lmm_mask_values(self):
        mask = LatentMixtureAgent.lmm_mask(np.array([1.0, 0.0, 3.0, -1.0]), np.array([1.0, 0.0, 1.0, 2.0]))
        np.testing.assert_allclose(mask, [0.5, 0.0, 0.75, 0.0], atol=1e-7)

    def test_separate_and_init_for_nes(self, blobs):
        agent = small_agent()
        agent.fit(blobs.observed_b, blobs.mixtures_y)
        x_tilde, mask, working_mask = agent.separate(blobs.eval_y)
        assert x_tilde.shape == blobs.eval_y.shape == mask.shape == working_mask.shape
        assert np.all((mask >= 0) & (mask <= 1))

        x0, train_mask = agent.init_for_nes(blobs.mixtures_y, estimates=agent.training_estimates())
        np.testing.assert_array_equal(x0, blobs.mixtures_y * (1.0 - train_mask))

    def test_working_resolution(self):
        dataset = gen_synthetic({'family': 'tones-spectrogram', 'shape': [8, 8], 'n_b': 8, 'n_y': 8,
                                 'n_eval': 3, 'seed': 4})
        agent = small_agent(working_shape=[4, 4])
        agent.fit(dataset.observed_b, dataset.mixtures_y)
        assert agent.generator_b.widths[-1] == 16
        x_tilde, mask, working_mask = agent.separate(dataset.eval_y)
        assert working_mask.shape == (3, 4, 4)
        assert mask.shape == x_tilde.shape == (3, 8, 8)
        assert np.all((mask >= 0) & (mask <= 1))

    def test_upsample_identity(self, rng):
        samples = rng.uniform(size=(2, 3, 3))
        np.testing.assert_array_equal(LatentMixtureAgent.upsample(samples, (3, 3)), samples)
        assert LatentMixtureAgent.upsample(samples, (5, 6)).shape == (2, 5, 6)

    def test_save(self, blobs, tmp_path):
        agent = small_agent()
        agent.fit(blobs.observed_b, blobs.mixtures_y)
        agent.save(tmp_path / "lm")
        assert (tmp_path / "lm" / "generator_b" / "manifest.json").exists()
        assert (tmp_path / "lm" / "codes_mix_x.egt").exists()
