"""Shared fixtures: a small simulated dataset and a trained model, reused by
the training, estimator and control tests to keep the suite fast.
"""

import numpy as np
import pytest

from grayqc.blackbox import ModelConfig
from grayqc.noise import RTN, TimeGrid
from grayqc.simulator import SimConfig, generate_dataset
from grayqc.training import TrainConfig, train


@pytest.fixture(scope="session")
def tiny_records():
    """300 quick low-resolution records at g = 0.1 RTN."""
    config = SimConfig(RTN(1.0), 0.1, seed=9, grid=TimeGrid(3.2, 500), realizations=200)
    return list(generate_dataset(300, config, seed=101))


@pytest.fixture(scope="session")
def tiny_model_config():
    return ModelConfig(whitebox_steps=500, dropout_rate=0.0)


@pytest.fixture(scope="session")
def tiny_trained(tiny_records, tiny_model_config):
    """(params, metrics) of a short training run on the tiny dataset."""
    return train(
        tiny_records,
        tiny_model_config,
        TrainConfig(epochs=40, batch_size=32, shuffle_seed=7),
        seed=3,
    )


@pytest.fixture()
def rng():
    return np.random.default_rng(123)
