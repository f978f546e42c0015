import numpy as np
import pytest

from vmlandau.collision import CollisionParams, assemble_L
from vmlandau.grid import TwoSpeciesField, build_grid


@pytest.fixture(scope="session")
def grid11():
    """Small production-shaped grid shared by most unit tests."""
    return build_grid(6.0, 11)


@pytest.fixture(scope="session")
def grid17():
    """Grid fine enough for near-machine Gaussian quadrature identities."""
    return build_grid(7.0, 17)


@pytest.fixture(scope="session")
def params():
    return CollisionParams(gamma=-3.0, c_phi=1.0)


@pytest.fixture(scope="session")
def params_soft():
    return CollisionParams(gamma=-2.5, c_phi=1.0)


@pytest.fixture(scope="session")
def op11(grid11, params):
    return assemble_L(grid11, params)


@pytest.fixture(scope="session")
def op17(grid17, params):
    return assemble_L(grid17, params)


@pytest.fixture(scope="session")
def op11_soft(grid11, params_soft):
    return assemble_L(grid11, params_soft)


def random_field(grid, rng, decay=0.25):
    """Random smooth-ish two-species field with Maxwellian-power envelope."""
    envelope = grid.mu ** decay
    vals = (rng.standard_normal((2, grid.size))
            + 1j * rng.standard_normal((2, grid.size))) * envelope
    return TwoSpeciesField(vals, grid)


def smooth_random_field(grid, rng, max_degree=3, decay=0.5):
    """Random polynomial times a Maxwellian power: smooth and decaying.

    Grid-resolution independent by construction, so refinement comparisons see
    the same underlying function family.
    """
    xi = grid.xi
    envelope = grid.mu ** decay
    vals = np.zeros((2, grid.size), dtype=complex)
    for s in range(2):
        acc = np.zeros(grid.size, dtype=complex)
        for a in range(max_degree + 1):
            for b in range(max_degree + 1 - a):
                for c in range(max_degree + 1 - a - b):
                    coef = rng.standard_normal() + 1j * rng.standard_normal()
                    acc += coef * xi[0] ** a * xi[1] ** b * xi[2] ** c
        vals[s] = acc * envelope
    return TwoSpeciesField(vals, grid)
