"""Shared fixtures: solved states reused across the whole suite.

Session scope keeps the expensive h = 0.05 / 0.025 solves to one each.
States are treated as immutable by every test.
"""

import pytest

from shapehess.integrands import make_p_torsion, make_torsion
from shapehess.mesh import generate_disk, generate_ellipse
from shapehess.solver import solve_state


@pytest.fixture(scope="session")
def torsion_pair():
    return make_torsion(1.0)


@pytest.fixture(scope="session")
def disk_state(torsion_pair):
    """Unit disk, pure Dirichlet, h = 0.05, torsion lam = 1."""
    return solve_state(generate_disk(1.0, 0.05), torsion_pair)


@pytest.fixture(scope="session")
def disk_state_fine(torsion_pair):
    """Same problem at h = 0.025 for refinement comparisons."""
    return solve_state(generate_disk(1.0, 0.025), torsion_pair)


@pytest.fixture(scope="session")
def disk_state_coarse(torsion_pair):
    """Same problem at h = 0.1: cheap enough for property tests."""
    return solve_state(generate_disk(1.0, 0.1), torsion_pair)


@pytest.fixture(scope="session")
def halfn_state(torsion_pair):
    """Half-Neumann unit disk at h = 0.05 (mixed boundary conditions)."""
    return solve_state(generate_disk(1.0, 0.05, dirichlet_fraction=0.5), torsion_pair)


@pytest.fixture(scope="session")
def ellipse_state(torsion_pair):
    """Ellipse (a, b) = (1.2, 0.8), pure Dirichlet, h = 0.05."""
    return solve_state(generate_ellipse(1.2, 0.8, 0.05), torsion_pair)


@pytest.fixture(scope="session")
def p3_pair():
    """p-power pair, p = 3, regularized for the Newton solve."""
    return make_p_torsion(3.0, 1.0, delta=1e-4)


@pytest.fixture(scope="session")
def p3_state(p3_pair):
    return solve_state(generate_disk(1.0, 0.05), p3_pair)
