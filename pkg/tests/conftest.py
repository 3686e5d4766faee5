import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from mfgvv import MFGProblem, QuadraticMeanField, SpatialGrid, TimeGrid, make_initial_density
from mfgvv.coupling import solve_mfg_fictitious_play

settings.register_profile("default", deadline=None, max_examples=60,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


def quadratic_problem(n=400, nt=800, sigma2=0.04, T=1.0):
    grid = SpatialGrid("truncated", -5.0, 5.0, n)
    tgrid = TimeGrid(T, nt)
    m0 = make_initial_density({"kind": "gaussian", "mean": 0.0, "variance": sigma2}, grid)
    return MFGProblem(QuadraticMeanField(), grid, tgrid, m0)


@pytest.fixture(scope="session")
def quad_solution():
    return solve_mfg_fictitious_play(quadratic_problem(), 0.3)


@pytest.fixture(scope="session")
def quad_solution_fine():
    return solve_mfg_fictitious_play(quadratic_problem(800, 1600), 0.3)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
