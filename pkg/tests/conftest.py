import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from wavesbl.solver import (
    Grid, SineNonlinearity, CubicNonlinearity, WaveProblem1D, gaussian_profile,
    manufactured_problem, solve_wave_1d, solve_wave_2d,
)
from wavesbl.switching import fixed_path

settings.register_profile("default", max_examples=40, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

CASE1_TIMES = (0.0, 1.22, 3.23, 3.90, 5.05, 5.97, 6.67)
CASE1_VALUES = (1.0, 0.5, 0.1, 1.0, 0.5, 0.1, 0.5)
CASE2_TIMES = (0.0, 0.45, 1.04, 1.48, 2.02)
CASE2_VALUES = (2.0, 1.0, 0.5, 1.0, 2.0)
CASE3_VALUES = (1.0, 2.0, 3.0, 2.0, 1.0, 3.0, 2.0, 1.0, 2.0, 3.0)


@pytest.fixture(scope="session")
def case1_path():
    return fixed_path(CASE1_TIMES, CASE1_VALUES, 8.0)


@pytest.fixture(scope="session")
def case2_path():
    return fixed_path(CASE2_TIMES, CASE2_VALUES, 2.5)


@pytest.fixture(scope="session")
def case3_path():
    return fixed_path([2.0 * i for i in range(10)], CASE3_VALUES, 20.0)


@pytest.fixture(scope="session")
def case1_snapshot(case1_path):
    prob = WaveProblem1D(10.0, SineNonlinearity(), gaussian_profile(10.0, 5.0))
    return solve_wave_1d(prob, case1_path, Grid(dx=0.025, steps_per_segment=100))


@pytest.fixture(scope="session")
def case2_snapshot(case2_path):
    # reduced grid: 256 space intervals, 256 steps per segment
    prob = WaveProblem1D(10.0, CubicNonlinearity(), gaussian_profile(8.0, 5.0))
    return solve_wave_1d(prob, case2_path, Grid(dx=10.0 / 256, steps_per_segment=256))


@pytest.fixture(scope="session")
def case3_snapshot(case3_path):
    # reduced grid: 33 x 33 x 1001
    return solve_wave_2d(manufactured_problem(), case3_path, Grid(dx=np.pi / 32, dt=0.02))


def random_orthonormal(rng, n, m):
    q, _ = np.linalg.qr(rng.standard_normal((n, m)))
    return q
