import numpy as np
import pytest

from nmc.mesh import Mesh
from nmc.synth import cube, grid, icosphere


@pytest.fixture
def unit_cube():
    return cube()


@pytest.fixture
def small_sphere():
    return icosphere(2)


@pytest.fixture
def flat_grid():
    return grid(8)


@pytest.fixture
def single_triangle():
    return Mesh(
        np.array([[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0]]),
        np.array([[0, 1, 2]]),
    )
