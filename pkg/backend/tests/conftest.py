import numpy as np
import pytest

from app.changepoint.kernels import KernelSpec


def pytest_addoption(parser):
    parser.addoption("--runslow", action="store_true", default=False, help="run slow Monte-Carlo acceptance tests")


def pytest_collection_modifyitems(config, items):
    if config.getoption("--runslow"):
        return
    skip_slow = pytest.mark.skip(reason="needs --runslow")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip_slow)


@pytest.fixture
def rng():
    return np.random.Generator(np.random.PCG64(1234))


@pytest.fixture
def random_spd(rng):
    """Factory: random SPD matrix of order n with the given condition number."""
    def make(n, cond=10.0):
        q, _ = np.linalg.qr(rng.standard_normal((n, n)))
        eig = np.logspace(0.0, -np.log10(cond), n)
        return (q * eig) @ q.T
    return make


@pytest.fixture
def random_kernel(rng):
    """Factory: RBF kernel with moderate hyperparameters and noise in [0.05, 0.5]."""
    def make(length=(0.5, 3.0), noise=(0.05, 0.5)):
        return KernelSpec(
            signal_variance=float(rng.uniform(0.5, 2.0)),
            length_scale=float(rng.uniform(*length)),
            noise_variance=float(rng.uniform(*noise)),
        )
    return make
