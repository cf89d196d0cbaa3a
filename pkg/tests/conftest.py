import sys
from pathlib import Path

import numpy as np
import pytest

ROOT = Path(__file__).resolve().parents[1]
if str(ROOT) not in sys.path:
    sys.path.insert(0, str(ROOT))

from ellelab.models import ModelConfig, model_new  # noqa: E402
from ellelab.data import synth_blobs  # noqa: E402


def pytest_addoption(parser):
    parser.addoption("--runslow", action="store_true", default=False, help="run short end-to-end training runs")


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: end-to-end runs that train for a few epochs")


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
def small_mlp():
    return model_new(ModelConfig(input_dim=6, hidden=(5,), classes=3, seed=7))


@pytest.fixture
def small_batch(rng):
    x = rng.uniform(0.2, 0.8, size=(4, 6))
    y = np.array([0, 1, 2, 1])
    return x, y


@pytest.fixture
def blobs():
    return synth_blobs(d=6, classes=3, n_per_class=8, margin=0.5, spread=0.1, seed=0)
