import json
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from epi_traj_opt import (
    ConfigError,
    ControlSchedule,
    DomainError,
    ParameterSet,
    TimeGrid,
    euler_simulate,
    extract_trajectory,
    pack,
    transcribe,
    transcription_report,
)
from epi_traj_opt.transcription import IndexMap, nlp_dump


def test_dimensions_default(dengue_nlp):
    assert dengue_nlp.n_vars == 5 * 209 + 2 * 208 == 1461
    assert dengue_nlp.n_eq == 5 * 208 == 1040
    assert dengue_nlp.fixed.sum() == 5


def test_dimensions_single_step():
    p = ParameterSet(t_final=0.25)
    nlp = transcribe(p, TimeGrid(0.25, 1))
    assert (nlp.n_vars, nlp.n_eq) == (12, 5)


def test_inconsistent_grid_rejected():
    with pytest.raises(ConfigError):
        transcribe(ParameterSet(), TimeGrid(0.25, 100))


def test_initial_cost_must_be_zero():
    with pytest.raises(DomainError):
        transcribe(ParameterSet(), None, (1, 0.12, 0.004, 0.05, 1.0))


def test_bounds(dengue_nlp, x0):
    imap = dengue_nlp.index_map
    first = imap.state(0, np.arange(5))
    np.testing.assert_array_equal(dengue_nlp.lower[first], x0)
    np.testing.assert_array_equal(dengue_nlp.upper[first], x0)
    u = imap.control(np.arange(208), 0)
    assert np.all(dengue_nlp.lower[u] == 0) and np.all(np.isinf(dengue_nlp.upper[u]))
    free = transcribe(ParameterSet(), nonnegative_controls=False)
    assert np.all(np.isinf(free.lower[u]))


def test_index_map_is_a_bijection():
    imap = IndexMap(5, 2, 6)
    seen = set()
    for i in range(imap.size):
        kind, node, k = imap.locate(i)
        back = imap.state(node, k) if kind == "state" else imap.control(node, k)
        assert back == i
        seen.add((kind, node, k))
    assert len(seen) == imap.size
    with pytest.raises(IndexError):
        imap.control(6, 0)


def test_objective_gradient_is_indicator(dengue_nlp):
    g = dengue_nlp.objective_gradient(np.zeros(dengue_nlp.n_vars))
    assert np.count_nonzero(g) == 1
    assert g[dengue_nlp.objective_index] == 1.0
    assert dengue_nlp.index_map.locate(dengue_nlp.objective_index) == ("state", 208, 4)


def test_packed_trajectory_is_feasible(dengue_nlp, zero_traj):
    z = pack(dengue_nlp, zero_traj)
    assert np.max(np.abs(dengue_nlp.constraints(z))) <= 1e-12
    back = extract_trajectory(dengue_nlp, z)
    assert back.total_cost == zero_traj.total_cost
    assert np.array_equal(back.states, zero_traj.states)
    assert back.warnings == ()


def test_defects_match_brute_force(dengue_nlp, params):
    rng = np.random.default_rng(3)
    z = rng.uniform(-1, 1, dengue_nlp.n_vars)
    c = dengue_nlp.constraints(z).reshape(208, 5)
    imap = dengue_nlp.index_map
    h = 0.25
    for i in range(0, 208, 17):
        x = np.array([z[imap.state(i, k)] for k in range(5)])
        xn = np.array([z[imap.state(i + 1, k)] for k in range(5)])
        u = np.array([z[imap.control(i, j)] for j in range(2)])
        x1, x2, x3, x4, _ = x
        a = params.alpha_r * (1 - params.mu * np.sin(params.omega * i * h)) - params.alpha_m - x4
        f = np.array([
            a * x1 - u[0],
            a * x2 + params.beta * (x1 - x2) * x3 - u[0],
            -params.eta * x3 + params.rho * x2 * (params.p - x3),
            -params.tau * x4 + params.theta * x3 + u[1],
            params.gamma_d * x3**2 + params.gamma_f * u[0] ** 2 + params.gamma_e * u[1] ** 2,
        ])
        np.testing.assert_allclose(c[i], xn - x - h * f, rtol=0, atol=1e-14)


def test_perturbation_locality(dengue_nlp, zero_traj):
    z = pack(dengue_nlp, zero_traj)
    base = dengue_nlp.constraints(z)
    for node, k in [(3, 0), (50, 2), (100, 3), (207, 1)]:
        idx = dengue_nlp.index_map.state(node, k)
        zp = z.copy()
        zp[idx] += 1e-3
        changed = np.nonzero(dengue_nlp.constraints(zp) != base)[0]
        structural = dengue_nlp.jac_rows[dengue_nlp.jac_cols == idx]
        assert set(changed) <= set(structural)
        assert 1 <= len(changed) <= 6


def test_jacobian_examples(dengue_nlp, zero_traj):
    z = pack(dengue_nlp, zero_traj)
    J = dengue_nlp.jacobian_matrix(z)
    imap = dengue_nlp.index_map
    for i in (0, 77, 207):
        assert J[i * 5 + 0, imap.control(i, 0)] == 0.25
        assert J[i * 5 + 1, imap.control(i, 0)] == 0.25
        for k in range(5):
            assert J[i * 5 + k, imap.state(i + 1, k)] == 1.0


def _fd_jacobian(nlp, z, step=1e-6):
    out = np.empty((nlp.n_eq, nlp.n_vars))
    for col in range(nlp.n_vars):
        e = np.zeros_like(z)
        e[col] = step
        out[:, col] = (nlp.constraints(z + e) - nlp.constraints(z - e)) / (2 * step)
    return out


def test_jacobian_vs_finite_differences_100_points():
    p = ParameterSet(t_final=5.0)
    nlp = transcribe(p, TimeGrid.uniform(5.0, 0.25))
    rng = np.random.default_rng(4)
    worst = 0.0
    for _ in range(100):
        z = rng.uniform(0, 1, nlp.n_vars)
        J = nlp.jacobian_matrix(z).toarray()
        fd = _fd_jacobian(nlp, z)
        worst = max(worst, np.max(np.abs(J - fd) / np.maximum(np.abs(fd), 1.0)))
    assert worst <= 1e-6


def test_jacobian_full_size_at_random_point(dengue_nlp):
    z = np.random.default_rng(5).uniform(0, 1, dengue_nlp.n_vars)
    J = dengue_nlp.jacobian_matrix(z).toarray()
    fd = _fd_jacobian(dengue_nlp, z)
    assert np.max(np.abs(J - fd) / np.maximum(np.abs(fd), 1.0)) <= 1e-6


def test_pattern_stability(dengue_nlp):
    rng = np.random.default_rng(6)
    digest = dengue_nlp.pattern_digest()
    rows0, cols0, _ = dengue_nlp.constraint_jacobian(np.zeros(dengue_nlp.n_vars))
    for _ in range(100):
        rows, cols, vals = dengue_nlp.constraint_jacobian(rng.normal(size=dengue_nlp.n_vars))
        assert np.array_equal(rows, rows0) and np.array_equal(cols, cols0)
        assert vals.shape == rows.shape
    assert dengue_nlp.pattern_digest() == digest


def test_extract_warns_when_infeasible(dengue_nlp, zero_traj):
    z = pack(dengue_nlp, zero_traj)
    z[dengue_nlp.index_map.state(10, 2)] += 0.1
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        traj = extract_trajectory(dengue_nlp, z)
    assert caught and "infeasible" in str(caught[0].message)
    assert traj.warnings


def test_wrong_length_rejected(dengue_nlp):
    with pytest.raises(DomainError):
        dengue_nlp.constraints(np.zeros(10))


def test_report(dengue_nlp):
    rep = transcription_report(dengue_nlp).to_dict()
    assert rep["n_vars"] == 1461 and rep["n_eq"] == 1040
    # every state and control at nodes 0..N-1 enters some bilinear or square term
    assert rep["n_nonlinear_vars"] == 6 * 208
    assert rep["n_nonlinear_eq"] == 4 * 208
    assert rep["external_presolved"]["n_vars"] == 1455
    assert rep["external_presolved_diff"]["n_vars"] == 6
    assert rep["external_presolved_diff"]["n_eq"] == 1
    json.dumps(rep)


def test_dump(dengue_nlp, zero_traj):
    z = pack(dengue_nlp, zero_traj)
    d = nlp_dump(dengue_nlp, z)
    text = json.dumps(d)
    assert "Infinity" not in text
    assert len(d["variables"]) == 1461 and len(d["defects"]) == 1040
    assert d["variables"][5] == {"index": 5, "kind": "control", "node": 0, "name": "u1",
                                 "lower": 0.0, "upper": None}


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2**32 - 1), st.floats(0.0, 0.03))
def test_simulation_transcription_equivalence(seed, scale):
    p = ParameterSet()
    grid = TimeGrid.uniform(52.0, 0.25)
    nlp = transcribe(p, grid)
    u = np.random.default_rng(seed).uniform(0, 1, (grid.n_steps, 2)) * scale
    traj = euler_simulate((1.0, 0.12, 0.004, 0.05, 0.0), ControlSchedule(grid, u), p)
    z = pack(nlp, traj)
    assert np.max(np.abs(nlp.constraints(z))) <= 1e-12
    back = extract_trajectory(nlp, z)
    again = euler_simulate(back.states[0], back.controls, p)
    assert np.max(np.abs(again.states - back.states)) <= 1e-10
