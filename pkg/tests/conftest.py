import numpy as np
import pytest

from omnigyro import kernels
from omnigyro.synthetic import SmoothScene


@pytest.fixture(params=["numba", "numpy"])
def backend(request):
    """Run a test once per kernel backend."""
    prev = kernels.get_backend()
    kernels.set_backend(request.param)
    yield request.param
    kernels.set_backend(prev)


@pytest.fixture(scope="session")
def scene():
    return SmoothScene.random(seed=7)


@pytest.fixture(scope="session")
def ref_img(scene):
    return scene.render(256)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def random_unit(rng, n=None):
    v = rng.normal(size=(3,) if n is None else (n, 3))
    return v / np.linalg.norm(v, axis=-1, keepdims=True)


ACCEPTANCE_KEY = pytest.StashKey[list]()


def pytest_configure(config):
    config.stash[ACCEPTANCE_KEY] = []


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(ACCEPTANCE_KEY, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines):
            terminalreporter.write_line(line)
