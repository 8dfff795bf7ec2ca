import numpy as np
import pytest

from quinticbose.grid import TorusGrid
from quinticbose.potential import PairProfile, ThreeBodyPotential


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def grid8():
    return TorusGrid(8)


@pytest.fixture(scope="session")
def grid16():
    return TorusGrid(16)


@pytest.fixture(scope="session")
def bump():
    """Quartic bump with int w = 200 and support radius 2.5."""
    return PairProfile(1.0, 2.5).with_amplitude_for_integral(200.0)


@pytest.fixture(scope="session")
def V(bump):
    return ThreeBodyPotential(bump, 0.15)
