import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from epi_traj_opt import (
    ConfigError,
    ControlSchedule,
    DomainError,
    ParameterSet,
    SolverConfig,
    TimeGrid,
    euler_simulate,
    kkt_residuals,
    pack,
    solve_nlp,
    solve_shooting,
    transcribe,
)
from epi_traj_opt.benchmarks import MinimumEnergyTransfer
from epi_traj_opt.solver import minimize_box, multistart, projected_gradient, shooting_objective
from epi_traj_opt.solver.auglag import HISTORY_COLUMNS


@pytest.fixture(scope="module")
def transfer():
    grid = TimeGrid.uniform(1.0, 0.01)
    nlp = transcribe(MinimumEnergyTransfer(), grid, (1.0, 0.0), nonnegative_controls=False,
                     terminal={0: 0.0})
    return grid, nlp


# bounded L-BFGS --------------------------------------------------------------

def test_projected_gradient():
    x = np.array([0.0, 0.5, 1.0, 2.0])
    g = np.array([1.0, 1.0, -1.0, 3.0])
    lo = np.array([0.0, 0.0, 0.0, 2.0])
    hi = np.array([1.0, 1.0, 1.0, 2.0])
    np.testing.assert_array_equal(projected_gradient(x, g, lo, hi), [0.0, 1.0, 0.0, 0.0])


def test_box_quadratic_hits_bounds():
    target = np.array([-1.0, 0.5, 3.0])

    def fun(x):
        return 0.5 * np.sum((x - target) ** 2), x - target

    res = minimize_box(fun, np.zeros(3), np.zeros(3), np.full(3, 2.0), gtol=1e-10)
    assert res.status == "converged"
    np.testing.assert_allclose(res.x, [0.0, 0.5, 2.0], atol=1e-10)


def test_box_rosenbrock():
    def fun(x):
        a, b = x
        f = (1 - a) ** 2 + 100 * (b - a * a) ** 2
        return f, np.array([-2 * (1 - a) - 400 * a * (b - a * a), 200 * (b - a * a)])

    res = minimize_box(fun, np.array([-1.2, 1.0]), np.array([-2.0, -2.0]), np.array([0.8, 2.0]),
                       gtol=1e-9, max_iter=2000)
    assert res.status == "converged"
    assert res.x[0] == pytest.approx(0.8, abs=1e-8)
    assert res.x[1] == pytest.approx(0.64, abs=1e-6)


def test_box_non_finite_start():
    res = minimize_box(lambda x: (np.inf, x), np.zeros(2), -np.ones(2), np.ones(2))
    assert res.status == "divergence"


# configuration and reports ---------------------------------------------------

@pytest.mark.parametrize(
    "changes",
    [{"tol_kkt": 0}, {"tol_feas": -1e-8}, {"max_outer": 0}, {"max_inner": 1.5},
     {"penalty_growth": 1.0}, {"penalty_init": 0.0}, {"seed": "x"}, {"memory": True}],
)
def test_config_validation(changes):
    with pytest.raises(ConfigError):
        SolverConfig(**changes)


def test_config_unknown_key():
    with pytest.raises(ConfigError, match="unknown"):
        SolverConfig.from_dict({"tol_kkt": 1e-6, "trust_radius": 1.0})
    assert SolverConfig.from_dict(SolverConfig().to_dict()) == SolverConfig()


def test_config_defaults():
    cfg = SolverConfig()
    assert (cfg.tol_kkt, cfg.tol_feas, cfg.max_outer, cfg.max_inner) == (1e-8, 1e-8, 50, 500)
    assert (cfg.penalty_init, cfg.penalty_growth, cfg.memory) == (10.0, 10.0, 10)


# KKT residuals ------------------------------------------------------------------

def test_kkt_on_feasible_point(dengue_nlp, zero_traj):
    z = pack(dengue_nlp, zero_traj)
    stat, feas, comp = kkt_residuals(dengue_nlp, z, np.zeros(dengue_nlp.n_eq))
    assert feas <= 1e-12
    # zero multipliers leave only the unit objective gradient
    assert stat == 1.0
    assert comp == 0.0


def test_kkt_dimension_mismatch(dengue_nlp):
    with pytest.raises(DomainError):
        kkt_residuals(dengue_nlp, np.zeros(dengue_nlp.n_vars), np.zeros(3))


def test_kkt_counts_bound_violation(dengue_nlp, zero_traj):
    z = pack(dengue_nlp, zero_traj)
    z[dengue_nlp.index_map.control(4, 1)] = -0.5
    _, feas, _ = kkt_residuals(dengue_nlp, z, np.zeros(dengue_nlp.n_eq))
    assert feas >= 0.5


# analytic problem -------------------------------------------------------------

def test_nlp_recovers_analytic_solution(transfer):
    _, nlp = transfer
    z, rep = solve_nlp(nlp)
    assert rep.converged
    assert abs(rep.objective - 1.0) <= 1e-4
    u = nlp.index_map.split(z)[1][:, 0]
    assert np.max(np.abs(u + 1.0)) <= 1e-3
    assert max(kkt_residuals(nlp, z, rep.multipliers)) <= 1e-8


def test_shooting_recovers_analytic_solution(transfer):
    grid, _ = transfer
    sched, rep = solve_shooting(MinimumEnergyTransfer(), grid, (1.0, 0.0),
                                nonnegative_controls=False, terminal={0: 0.0})
    assert rep.converged
    assert np.max(np.abs(sched.values + 1.0)) <= 1e-3
    traj = euler_simulate((1.0, 0.0), sched, MinimumEnergyTransfer())
    assert abs(traj.total_cost - 1.0) <= 1e-4


def test_analytic_cross_method(transfer):
    grid, nlp = transfer
    _, a = solve_nlp(nlp)
    sched, _ = solve_shooting(MinimumEnergyTransfer(), grid, (1.0, 0.0),
                              nonnegative_controls=False, terminal={0: 0.0})
    b = euler_simulate((1.0, 0.0), sched, MinimumEnergyTransfer()).total_cost
    assert abs(a.objective - b) / abs(b) <= 1e-4


# adjoint gradient ---------------------------------------------------------------

def test_adjoint_gradient_vs_finite_differences():
    p = ParameterSet(t_final=13.0)
    grid = TimeGrid.uniform(13.0, 0.25)
    x0 = (1.0, 0.12, 0.004, 0.05, 0.0)
    rng = np.random.default_rng(7)
    step = 1e-6
    worst = 0.0
    for _ in range(20):
        u = rng.uniform(0, 0.1, (grid.n_steps, 2))
        _, grad, _ = shooting_objective(p, grid, x0, u)
        fd = np.empty(u.size)
        for k in range(u.size):
            e = np.zeros(u.size)
            e[k] = step
            hi = euler_simulate(x0, ControlSchedule(grid, (u.ravel() + e).reshape(u.shape)), p)
            lo = euler_simulate(x0, ControlSchedule(grid, (u.ravel() - e).reshape(u.shape)), p)
            fd[k] = (hi.total_cost - lo.total_cost) / (2 * step)
        worst = max(worst, np.max(np.abs(grad.ravel() - fd) / np.maximum(np.abs(fd), 1.0)))
    assert worst <= 1e-6


def test_terminal_penalty_gradient():
    grid = TimeGrid.uniform(1.0, 0.1)
    u = np.linspace(-1, 0.5, 10)[:, None]
    value, grad, traj = shooting_objective(MinimumEnergyTransfer(), grid, (1.0, 0.0), u,
                                           terminal={0: 0.0}, weight=10.0)
    xN = traj.states[-1]
    assert value == pytest.approx(xN[1] + 10.0 * xN[0] ** 2)
    # d/du_i [sum h u^2 + w (1 + h sum u)^2] = 2 h u_i + 2 w h x_N
    np.testing.assert_allclose(grad[:, 0], 0.2 * u[:, 0] + 2.0 * xN[0], rtol=1e-12)


# Dengue ----------------------------------------------------------------------

def test_dengue_nlp_converges(dengue_nlp, dengue_solution, zero_traj):
    z, rep = dengue_solution
    assert rep.status == "converged"
    assert rep.feasibility <= 1e-8 and rep.kkt_residual <= 1e-8
    stat, feas, comp = kkt_residuals(dengue_nlp, z, rep.multipliers)
    assert max(stat, feas, comp) <= 1e-8
    assert np.all(z >= dengue_nlp.lower) and np.all(z <= dengue_nlp.upper)
    assert rep.objective < zero_traj.total_cost


def test_dengue_cross_method(dengue_solution, shooting_solution):
    _, a = dengue_solution
    _, b = shooting_solution
    assert b.converged
    assert abs(a.objective - b.objective) / abs(b.objective) <= 1e-4


def test_history_bookkeeping(dengue_solution):
    _, rep = dengue_solution
    hist = np.array(rep.history)
    assert hist.shape[1] == len(HISTORY_COLUMNS)
    outers = np.unique(hist[:, 0])
    # accepted inner iterates never raise the merit of their own sub-problem
    for k in outers:
        merit = hist[hist[:, 0] == k, 2]
        assert np.all(np.diff(merit) <= 1e-12 * np.maximum(1.0, np.abs(merit[:-1])))
    # defect norm at outer ends: non-increasing after the first penalty increase, slack 10
    ends = np.array([hist[hist[:, 0] == k][-1] for k in outers])
    first_raise = int(np.argmax(np.diff(ends[:, 5]) > 0)) + 1
    feas = ends[first_raise:, 3]
    assert np.all(feas[1:] <= 10.0 * feas[:-1])


def test_determinism(dengue_nlp, dengue_solution):
    _, first = dengue_solution
    _, second = solve_nlp(dengue_nlp)
    assert first.history == second.history
    assert first.to_dict(include_timing=False) == second.to_dict(include_timing=False)


def test_report_serialisation(dengue_solution):
    _, rep = dengue_solution
    data = json.loads(rep.to_json())
    assert data["status"] == "converged"
    assert data["history"]["columns"] == list(HISTORY_COLUMNS)
    lines = rep.history_csv().splitlines()
    assert lines[0] == "outer,inner,merit,feas,kkt,penalty"
    assert len(lines) == len(rep.history) + 1


def test_iteration_cap_returns_best_iterate(dengue_nlp):
    z, rep = solve_nlp(dengue_nlp, None, SolverConfig(max_outer=1, max_inner=5))
    assert rep.status == "iteration-cap"
    assert np.all(np.isfinite(z))
    assert rep.outer_iterations == 1 and rep.inner_iterations <= 5


def test_divergence_status(dengue_nlp, zero_traj):
    z0 = pack(dengue_nlp, zero_traj)
    z0[dengue_nlp.index_map.state(5, 0)] = 1e200
    _, rep = solve_nlp(dengue_nlp, z0, SolverConfig(max_outer=2))
    assert rep.status == "divergence"


def test_scaling_warning(dengue_nlp, zero_traj):
    z0 = pack(dengue_nlp, zero_traj)
    z0[dengue_nlp.index_map.control(5, 0)] = 5e3
    with pytest.warns(UserWarning, match="magnitude"):
        _, rep = solve_nlp(dengue_nlp, z0, SolverConfig(max_outer=1, max_inner=1))
    assert rep.warnings


@pytest.mark.slow
def test_multistart_agreement(dengue_nlp):
    res = multistart(dengue_nlp, 5, SolverConfig(seed=11))
    assert all(r.converged for r in res.reports)
    assert res.spread <= 1e-3


@settings(max_examples=10, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_shooting_objective_matches_simulation(seed):
    p = ParameterSet()
    grid = TimeGrid.uniform(52.0, 0.25)
    u = np.random.default_rng(seed).uniform(0, 0.02, (grid.n_steps, 2))
    value, grad, traj = shooting_objective(p, grid, (1.0, 0.12, 0.004, 0.05, 0.0), u)
    assert value == traj.total_cost
    assert grad.shape == u.shape and np.all(np.isfinite(grad))
