import math

import pytest

from ls_sweep.problem import GridSpec, gaussian_velocity


@pytest.fixture
def small_grid() -> GridSpec:
    # omega/2pi = 3 on 18 interior points: partition widths 8,4,4,4,8
    return GridSpec(omega=2 * math.pi * 3, n=18, b=4)


@pytest.fixture
def solve_grid() -> GridSpec:
    return GridSpec(omega=2 * math.pi * 4, n=31, b=4)


@pytest.fixture
def converging(solve_grid: GridSpec):
    return gaussian_velocity(solve_grid, [[0.5, 0.5]], [-0.2], [0.1])
