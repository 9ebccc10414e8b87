"""Shared fixtures: seeded generators, a small octagon mesh and small disc contexts."""

import numpy as np
import pytest

from cmc_foliation.cmc_solver import disc_context
from cmc_foliation.conformal import HoloMap
from cmc_foliation.surface_mesh import build_octagon_surface

SEED = 20240611


@pytest.fixture
def rng():
    """A fresh generator with the suite-wide seed."""
    return np.random.default_rng(SEED)


@pytest.fixture(scope="session")
def small_mesh():
    """Octagon mesh at subdiv 2."""
    return build_octagon_surface(2)


@pytest.fixture(scope="session")
def mesh3():
    """Octagon mesh at subdiv 3."""
    return build_octagon_surface(3)


@pytest.fixture(scope="session")
def flat_ctx():
    """Disc context with phi = 0 on a 25-point grid."""
    return disc_context(HoloMap.identity(), grid_points=25, disc_radius=0.9)


@pytest.fixture(scope="session")
def cubic_ctx():
    """Disc context for z + 0.01 z^3 on a 25-point grid."""
    return disc_context(HoloMap.cubic(0.01), grid_points=25, disc_radius=0.9)
