"""Shared fixtures for the test suite."""

import os
import sys

import numpy as np
import pytest

# Add project root to path
sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))


def pytest_addoption(parser):
    parser.addoption("--runslow", action="store_true", default=False,
                     help="run desk-scale quantitative checks (minutes each)")


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: desk-scale quantitative check, needs --runslow")


def pytest_collection_modifyitems(config, items):
    if config.getoption("--runslow"):
        return
    skip_slow = pytest.mark.skip(reason="needs --runslow")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip_slow)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def tiny_config():
    """Experiment mapping small enough to run every method in seconds."""
    return {
        'method': 'nes',
        'seed': 7,
        'dataset': {'source': 'synthetic', 'family': 'bars', 'shape': [6, 6],
                    'n_b': 24, 'n_y': 24, 'n_eval': 8},
        'model': {'mask_hidden': [16], 'generator_hidden': [16], 'discriminator_hidden': [16],
                  'latent_dim': 4},
        'nes': {'iterations': 2, 'epochs': 2, 'batch_size': 8},
        'lm': {'stage1_epochs': 2, 'stage2_epochs': 2, 'inference_steps': 3, 'batch_size': 8},
        'nmf': {'bases': 4, 'train_iters': 5, 'separate_iters': 5, 'eval_iters': 5},
        'am': {'epochs': 2, 'batch_size': 8},
        'supervised': {'epochs': 2, 'batch_size': 8},
        'output': {'dump_samples': 2},
    }
