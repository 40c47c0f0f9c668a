"""Shared pytest fixtures and the --runslow switch for preset-scale runs."""
import numpy as np
import pytest

from frozenrb.grid import GridSpec, project_initial
from frozenrb.services.study_service import initial_datum


def pytest_addoption(parser):
    parser.addoption("--runslow", action="store_true", default=False, help="run preset-scale acceptance tests")


def pytest_collection_modifyitems(config, items):
    if config.getoption("--runslow"):
        return
    skip_slow = pytest.mark.skip(reason="needs --runslow")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip_slow)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def tiny_grid():
    return GridSpec(nx=8, ny=4, lx=2.0, ly=1.0)


@pytest.fixture
def small_grid():
    return GridSpec(nx=16, ny=8, lx=2.0, ly=1.0)


@pytest.fixture
def preset_grid():
    return GridSpec(nx=120, ny=60, lx=2.0, ly=1.0)


@pytest.fixture
def preset_u0(preset_grid):
    return project_initial(preset_grid, initial_datum)


def random_orthonormal_basis(grid, n, rng):
    """n random L2-orthonormal rows on ``grid``."""
    q, _ = np.linalg.qr(rng.standard_normal((grid.size, n)))
    return q.T / np.sqrt(grid.cell_area)
