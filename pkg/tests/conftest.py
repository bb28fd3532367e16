import numpy as np
import pytest

from aquadesign.grid import DensityField, GridSpec


@pytest.fixture
def grid8():
    return GridSpec(dims=(8, 8), cell_size=0.125)


@pytest.fixture
def rng():
    return np.random.default_rng(42)


def blob(grid, center, width):
    """Normalized Gaussian bump used as a generic smooth density."""
    x = grid.cell_centers()
    r2 = ((x - np.asarray(center)) ** 2).sum(axis=-1)
    vals = np.exp(-r2 / (2.0 * width ** 2))
    return DensityField(grid, vals / vals.sum())


def dirac(grid, cell_index):
    """All mass in one cell."""
    vals = np.zeros(grid.dims)
    vals[cell_index] = 1.0
    return DensityField(grid, vals)
