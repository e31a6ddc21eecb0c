import os

# keep test runs from writing aniso_sio.log into the working tree
os.environ.setdefault("ANISO_SIO_LOG_FILE", "")
os.environ.setdefault("ANISO_SIO_THREADS", "2")

import pytest  # noqa: E402

from core.state import OperationLedger, RunState  # noqa: E402
from sio.gridfn import Grid  # noqa: E402
from sio.metric import AnisotropyProfile  # noqa: E402


@pytest.fixture(autouse=True)
def reset_state():
    RunState.reset()
    OperationLedger.reset()
    yield


@pytest.fixture
def iso2():
    return AnisotropyProfile((1.0, 1.0))


@pytest.fixture
def aniso2():
    return AnisotropyProfile((1.0, 2.0))


@pytest.fixture
def aniso3():
    return AnisotropyProfile((1.0, 1.5, 2.0))


@pytest.fixture
def small_grid():
    """17 x 17 points on [-2, 2]^2, h = 0.25."""
    return Grid((-2.0, -2.0), (2.0, 2.0), (17, 17))


@pytest.fixture
def grid33():
    """33 x 33 points on [-4, 4]^2, h = 0.25."""
    return Grid((-4.0, -4.0), (4.0, 4.0), (33, 33))
