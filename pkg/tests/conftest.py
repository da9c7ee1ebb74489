import math

import numpy as np
import pytest

from qchom.cutproject import (CellLattice, CutProjectMap, golden_ratio_map,
                              identity_map, unit_cell)

TAU = (1.0 + math.sqrt(5.0)) / 2.0


@pytest.fixture(scope="session")
def golden16():
    m = golden_ratio_map((16, 16))
    m.validate(k_max=8)
    return m


@pytest.fixture(scope="session")
def golden64():
    m = golden_ratio_map((64, 64))
    m.validate(k_max=8)
    return m


@pytest.fixture(scope="session")
def periodic2():
    m = identity_map(2, (32, 32))
    m.validate(k_max=8)
    return m


@pytest.fixture(scope="session")
def slab3():
    """n=2 slice of the 3-torus with irrational tilt."""
    R = np.array([[1.0, 0.0], [0.0, 1.0], [TAU, TAU]])
    m = CutProjectMap(2, 3, R, unit_cell(3, (16, 16, 16)))
    m.validate(k_max=8)
    return m


def rational_map(grid=(16, 16)):
    return CutProjectMap(1, 2, np.array([[1.0], [2.0]]), unit_cell(2, grid))


def skewed_cell(grid=(16, 16)):
    basis = np.array([[1.0, 0.3], [0.0, 0.8]])
    return CellLattice(2, basis, grid)
