import numpy as np
import pytest

from beamix.array import default_array
from beamix.stft import StftConfig


@pytest.fixture(scope="session")
def geom():
    return default_array()


@pytest.fixture(scope="session")
def stft_cfg():
    return StftConfig()


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
