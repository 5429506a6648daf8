import logging

import pytest

from pwfn.config import DatasetSpec, RunConfig
from pwfn.datasets import make_blobs
from pwfn.numerics import NetworkSpec
from tests.helpers import random_store


@pytest.fixture
def small_spec():
    """A [2, 8, 8, 3] MLP"""
    return NetworkSpec((2, 8, 8, 3))


@pytest.fixture
def gaussian_store(small_spec):
    """Store with N(0, 0.5) means and sigma spread over [0.01, 0.05]"""
    return random_store(small_spec, 11)


@pytest.fixture
def small_blobs():
    """(train, test) of 300 / 150 three-class blobs"""
    return make_blobs(DatasetSpec(n_train=300, n_test=150, seed=5))


@pytest.fixture
def tiny_config():
    """A run small enough for the fast test suite"""
    return RunConfig(
        network=NetworkSpec((2, 8, 3)),
        dataset=DatasetSpec(n_train=240, n_test=120, seed=1),
        rounds_T=3,
        epochs_per_round=1,
        pretrain_epochs=5,
        batch_size=32,
        seed=3,
    )


@pytest.fixture
def log_dir(tmp_path, monkeypatch):
    """Send the CLI's rotating log into the test's temp directory"""
    path = tmp_path / 'logs'
    monkeypatch.setenv('PWFN_LOG_DIR', str(path))
    yield path
    package_logger = logging.getLogger('pwfn')
    for handler in list(package_logger.handlers):
        package_logger.removeHandler(handler)
        handler.close()
    package_logger.propagate = True
