import numpy as np
import pytest

from epi_traj_opt import (
    DEFAULT_INITIAL_STATE,
    ControlSchedule,
    ParameterSet,
    TimeGrid,
    euler_simulate,
    solve_nlp,
    solve_shooting,
    transcribe,
)


@pytest.fixture(scope="session")
def params():
    return ParameterSet()


@pytest.fixture(scope="session")
def grid(params):
    return TimeGrid.uniform(params.t_final, 0.25)


@pytest.fixture(scope="session")
def x0():
    return np.array(DEFAULT_INITIAL_STATE, float)


@pytest.fixture(scope="session")
def zero_traj(params, grid, x0):
    return euler_simulate(x0, ControlSchedule.zeros(grid, 2), params)


@pytest.fixture(scope="session")
def dengue_nlp(params, grid, x0):
    return transcribe(params, grid, x0)


@pytest.fixture(scope="session")
def dengue_solution(dengue_nlp):
    return solve_nlp(dengue_nlp)


@pytest.fixture(scope="session")
def shooting_solution(params, grid, x0):
    return solve_shooting(params, grid, x0)


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
