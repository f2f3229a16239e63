"""Direct transcription of the optimal control problem with explicit Euler.

Decision vector layout (node-interleaved, stride ``n + m``)::

    z = [x(0), u(0), x(1), u(1), ..., x(N-1), u(N-1), x(N)]

Defects are ordered node-major, state-minor: row ``i*n + k`` is

    c_{i,k}(z) = x_k(i+1) - x_k(i) - h f_k(t_i, x(i), u(i)),   t_i = i*h.

The objective is a single terminal variable, the accumulated cost x_cost(N).
"""

from __future__ import annotations

import hashlib
import math
import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .errors import ConfigError, DomainError
from .integrator import ControlSchedule, TimeGrid, Trajectory
from .model import ControlSystem, as_system

__all__ = [
    "IndexMap",
    "NlpProblem",
    "TranscriptionReport",
    "transcribe",
    "evaluate_defects",
    "constraint_jacobian",
    "pack",
    "extract_trajectory",
    "transcription_report",
    "nlp_dump",
]

# Counts published for the same 52-week, h = 1/4 problem after an external
# modelling toolchain's presolve (exact eliminations unknown).
EXTERNAL_PRESOLVED_COUNTS = {
    "n_vars": 1455,
    "n_nonlinear_vars": 1243,
    "n_eq": 1039,
    "n_nonlinear_eq": 828,
}


@dataclass(frozen=True)
class IndexMap:
    n_states: int
    n_controls: int
    n_steps: int

    @property
    def stride(self) -> int:
        return self.n_states + self.n_controls

    @property
    def size(self) -> int:
        return self.n_steps * self.stride + self.n_states

    def state(self, node, k):
        if np.any((np.asarray(k) < 0) | (np.asarray(k) >= self.n_states)):
            raise IndexError(f"state index {k} out of range")
        node = np.asarray(node)
        if np.any((node < 0) | (node > self.n_steps)):
            raise IndexError("node out of range")
        return node * self.stride + k

    def control(self, interval, j):
        if np.any((np.asarray(j) < 0) | (np.asarray(j) >= self.n_controls)):
            raise IndexError(f"control index {j} out of range")
        interval = np.asarray(interval)
        if np.any((interval < 0) | (interval >= self.n_steps)):
            raise IndexError("interval out of range")
        return interval * self.stride + self.n_states + j

    def locate(self, index: int) -> tuple[str, int, int]:
        """Inverse map: flat index -> ('state', node, k) or ('control', interval, j)."""
        if not 0 <= index < self.size:
            raise IndexError(f"flat index {index} out of range")
        node, offset = divmod(index, self.stride)
        if offset < self.n_states:
            return "state", node, offset
        return "control", node, offset - self.n_states

    def split(self, z):
        """View ``z`` as (states (N+1, n), controls (N, m))."""
        n, N = self.n_states, self.n_steps
        body = z[: N * self.stride].reshape(N, self.stride)
        states = np.vstack([body[:, :n], z[N * self.stride :][None, :]])
        return states, body[:, n:]

    def join(self, states, controls):
        N = self.n_steps
        z = np.empty(self.size)
        body = z[: N * self.stride].reshape(N, self.stride)
        body[:, : self.n_states] = states[:N]
        body[:, self.n_states :] = controls
        z[N * self.stride :] = states[N]
        return z


@dataclass
class NlpProblem:
    """Euler-transcribed optimal control problem.

    Bounds: ``lower == upper`` fixes a variable (initial state, optional
    terminal targets); controls default to ``[0, inf)``.
    """

    system: ControlSystem
    grid: TimeGrid
    index_map: IndexMap
    lower: np.ndarray
    upper: np.ndarray
    objective_index: int
    jac_rows: np.ndarray = field(repr=False)
    jac_cols: np.ndarray = field(repr=False)
    _jac_slots: tuple = field(repr=False)
    _csr_perm: np.ndarray = field(repr=False, default=None)
    _csr_template: sp.csr_matrix = field(repr=False, default=None)

    @property
    def n_vars(self) -> int:
        return self.index_map.size

    @property
    def n_eq(self) -> int:
        return self.grid.n_steps * self.index_map.n_states

    @property
    def fixed(self) -> np.ndarray:
        return self.lower == self.upper

    def _check(self, z):
        z = np.asarray(z, dtype=float)
        if z.shape != (self.n_vars,):
            raise DomainError(f"decision vector must have length {self.n_vars}, got {z.shape}")
        return z

    def objective(self, z) -> float:
        return float(self._check(z)[self.objective_index])

    def objective_gradient(self, z) -> np.ndarray:
        self._check(z)
        g = np.zeros(self.n_vars)
        g[self.objective_index] = 1.0
        return g

    def constraints(self, z) -> np.ndarray:
        z = self._check(z)
        states, controls = self.index_map.split(z)
        h = self.grid.h
        f = self.system.rhs(self.grid.times[:-1], states[:-1], controls)
        return (states[1:] - states[:-1] - h * f).ravel()

    def constraint_jacobian(self, z) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Triplets ``(rows, cols, values)``; rows/cols never change."""
        z = self._check(z)
        states, controls = self.index_map.split(z)
        h = self.grid.h
        fx, fu = self.system.jac(self.grid.times[:-1], states[:-1], controls)
        (xk, xl, diag), (uk, uj), n_next = self._jac_slots
        n_steps = self.grid.n_steps
        vals_x = -h * fx[:, xk, xl] - diag
        vals_u = -h * fu[:, uk, uj]
        vals_next = np.ones((n_steps, n_next))
        vals = np.concatenate([vals_x, vals_u, vals_next], axis=1).ravel()
        return self.jac_rows, self.jac_cols, vals

    def jacobian_matrix(self, z) -> sp.csr_matrix:
        _, _, vals = self.constraint_jacobian(z)
        if self._csr_template is None:
            tag = np.arange(1, vals.size + 1, dtype=float)
            tmpl = sp.csr_matrix((tag, (self.jac_rows, self.jac_cols)), shape=(self.n_eq, self.n_vars))
            tmpl.sort_indices()
            self._csr_perm = tmpl.data.astype(np.int64) - 1
            self._csr_template = tmpl
        mat = self._csr_template.copy()
        mat.data = vals[self._csr_perm]
        return mat

    def pattern_digest(self) -> str:
        h = hashlib.sha256()
        h.update(self.jac_rows.tobytes())
        h.update(self.jac_cols.tobytes())
        return h.hexdigest()

    def project(self, z) -> np.ndarray:
        return np.clip(self._check(z), self.lower, self.upper)


@dataclass(frozen=True)
class TranscriptionReport:
    n_vars: int
    n_eq: int
    n_nonlinear_vars: int
    n_nonlinear_eq: int
    n_fixed_vars: int
    n_nonlinear_free_vars: int
    grid: dict
    external_presolved: dict = field(default_factory=lambda: dict(EXTERNAL_PRESOLVED_COUNTS))

    def to_dict(self) -> dict:
        out = {
            "n_vars": self.n_vars,
            "n_eq": self.n_eq,
            "n_nonlinear_vars": self.n_nonlinear_vars,
            "n_nonlinear_eq": self.n_nonlinear_eq,
            "n_fixed_vars": self.n_fixed_vars,
            "n_free_vars": self.n_vars - self.n_fixed_vars,
            "n_nonlinear_free_vars": self.n_nonlinear_free_vars,
            "grid": dict(self.grid),
            "external_presolved": dict(self.external_presolved),
        }
        out["external_presolved_diff"] = {
            key: out[key] - value for key, value in self.external_presolved.items()
        }
        return out


def _jacobian_slots(system, index_map):
    n, m, N = index_map.n_states, index_map.n_controls, index_map.n_steps
    sx, su = system.jac_structure()
    sx = np.asarray(sx, bool) | np.eye(n, dtype=bool)
    xk, xl = np.nonzero(sx)
    diag = (xk == xl).astype(float)
    uk, uj = np.nonzero(np.asarray(su, bool))
    nk = np.arange(n)

    i = np.arange(N)[:, None]
    stride = index_map.stride
    rows = np.concatenate(
        [i * n + xk, i * n + uk, i * n + nk], axis=1
    ).ravel()
    cols = np.concatenate(
        [i * stride + xl, i * stride + n + uj, (i + 1) * stride + nk], axis=1
    ).ravel()
    return rows.astype(np.int64), cols.astype(np.int64), ((xk, xl, diag), (uk, uj), n)


def transcribe(
    params=None,
    grid: TimeGrid | None = None,
    initial=None,
    *,
    nonnegative_controls: bool = True,
    control_bounds=None,
    terminal=None,
) -> NlpProblem:
    """Build the Euler-transcribed NLP.

    Parameters
    ----------
    params : ParameterSet or ControlSystem
        Dengue parameters (default set when None) or any control system.
    grid : TimeGrid
        Defaults to h = 1/4 over the horizon of ``params``.
    initial : sequence
        Initial state, fixed through equal bounds.  Its cost entry must be 0.
    nonnegative_controls : bool
        Impose ``u >= 0``.  Ignored when ``control_bounds`` is given.
    control_bounds : (lower, upper), optional
        Per-control bounds, each a scalar or a length-m sequence.
    terminal : dict, optional
        ``{state index: value}`` terminal states fixed through equal bounds.
    """
    system = as_system(params)
    sys_params = getattr(system, "params", None)
    if grid is None:
        if sys_params is None:
            raise ConfigError("a grid is required for a generic control system")
        grid = TimeGrid.uniform(sys_params.t_final, 0.25)
    if sys_params is not None:
        grid.check_horizon(sys_params.t_final)
    if system.cost_index is None:
        raise ConfigError("the system has no accumulated-cost state to minimise")
    if initial is None:
        from .model import DEFAULT_INITIAL_STATE

        initial = DEFAULT_INITIAL_STATE
    x0 = np.asarray(initial, float)
    if x0.shape != (system.n_states,) or not np.all(np.isfinite(x0)):
        raise DomainError("initial state has the wrong size or non-finite entries")
    if x0[system.cost_index] != 0.0:
        raise DomainError("the accumulated-cost state must start at 0")

    imap = IndexMap(system.n_states, system.n_controls, grid.n_steps)
    lower = np.full(imap.size, -np.inf)
    upper = np.full(imap.size, np.inf)
    first = imap.state(0, np.arange(system.n_states))
    lower[first] = x0
    upper[first] = x0

    if control_bounds is None:
        control_bounds = (0.0, np.inf) if nonnegative_controls else (-np.inf, np.inf)
    lo_u = np.broadcast_to(np.asarray(control_bounds[0], float), (system.n_controls,))
    hi_u = np.broadcast_to(np.asarray(control_bounds[1], float), (system.n_controls,))
    if np.any(lo_u > hi_u):
        raise ConfigError("control lower bound exceeds upper bound")
    intervals = np.arange(grid.n_steps)
    for j in range(system.n_controls):
        idx = imap.control(intervals, j)
        lower[idx] = lo_u[j]
        upper[idx] = hi_u[j]

    for k, value in (terminal or {}).items():
        idx = imap.state(grid.n_steps, int(k))
        lower[idx] = upper[idx] = float(value)

    rows, cols, slots = _jacobian_slots(system, imap)
    return NlpProblem(
        system=system,
        grid=grid,
        index_map=imap,
        lower=lower,
        upper=upper,
        objective_index=int(imap.state(grid.n_steps, system.cost_index)),
        jac_rows=rows,
        jac_cols=cols,
        _jac_slots=slots,
    )


def evaluate_defects(nlp: NlpProblem, z) -> np.ndarray:
    return nlp.constraints(z)


def constraint_jacobian(nlp: NlpProblem, z):
    return nlp.constraint_jacobian(z)


def pack(nlp: NlpProblem, traj: Trajectory) -> np.ndarray:
    """Flatten a trajectory into a decision vector."""
    if traj.grid.n_steps != nlp.grid.n_steps:
        raise DomainError("trajectory and NLP grids differ")
    return nlp.index_map.join(traj.states, traj.controls.values)


def extract_trajectory(nlp: NlpProblem, z, tol_feas: float = 1e-8) -> Trajectory:
    """Un-flatten ``z``.  An infeasible point is returned with a warning
    attached (and emitted), not rejected."""
    z = nlp._check(z)
    states, controls = nlp.index_map.split(z)
    notes = []
    defect = np.max(np.abs(nlp.constraints(z)), initial=0.0)
    if not defect <= tol_feas:
        msg = f"decision vector is infeasible: max |defect| = {defect:.3g} > {tol_feas:g}"
        warnings.warn(msg)
        notes.append(msg)
    return Trajectory(
        nlp.grid,
        states.copy(),
        ControlSchedule(nlp.grid, controls.copy()),
        state_names=tuple(nlp.system.state_names),
        cost_index=nlp.system.cost_index,
        warnings=tuple(notes),
    )


def _nonlinear_flags(system, grid, rng):
    """Which states/controls enter some f_k nonlinearly, and which f_k are
    nonlinear, judged by central differences of the analytic Jacobian at a
    random point (second derivatives of the dynamics)."""
    n, m = system.n_states, system.n_controls
    x = rng.uniform(0.1, 1.0, n)
    u = rng.uniform(0.1, 1.0, m)
    t = float(rng.uniform(0.0, grid.t_final))
    eps = 1e-4
    second = np.zeros((n, n + m, n + m))
    for v in range(n + m):
        dx = np.zeros(n)
        du = np.zeros(m)
        if v < n:
            dx[v] = eps
        else:
            du[v - n] = eps
        fx_p, fu_p = system.jac(t, x + dx, u + du)
        fx_m, fu_m = system.jac(t, x - dx, u - du)
        second[:, :, v] = np.concatenate([fx_p - fx_m, fu_p - fu_m], axis=1) / (2 * eps)
    nonzero = np.abs(second) > 1e-9
    var_nonlinear = nonzero.any(axis=(0, 1)) | nonzero.any(axis=(0, 2))
    eq_nonlinear = nonzero.any(axis=(1, 2))
    return var_nonlinear[:n], var_nonlinear[n:], eq_nonlinear


def transcription_report(nlp: NlpProblem, seed: int = 0) -> TranscriptionReport:
    """Problem dimensions, including linear/nonlinear classification.

    A variable is nonlinear when it appears in a nonzero second derivative of
    some defect; a defect is nonlinear when its Hessian is nonzero.  Node-N
    states only enter defects linearly.
    """
    rng = np.random.default_rng(seed)
    x_nl, u_nl, eq_nl = _nonlinear_flags(nlp.system, nlp.grid, rng)
    N = nlp.grid.n_steps
    nl_mask = np.zeros(nlp.n_vars, bool)
    for k in np.nonzero(x_nl)[0]:
        nl_mask[nlp.index_map.state(np.arange(N), k)] = True
    for j in np.nonzero(u_nl)[0]:
        nl_mask[nlp.index_map.control(np.arange(N), j)] = True
    fixed = nlp.fixed
    return TranscriptionReport(
        n_vars=nlp.n_vars,
        n_eq=nlp.n_eq,
        n_nonlinear_vars=int(nl_mask.sum()),
        n_nonlinear_eq=int(eq_nl.sum()) * N,
        n_fixed_vars=int(fixed.sum()),
        n_nonlinear_free_vars=int((nl_mask & ~fixed).sum()),
        grid={"t0": nlp.grid.t0, "h": nlp.grid.h, "n_steps": N, "t_final": nlp.grid.t_final},
    )


def _json_bound(v):
    return None if math.isinf(v) else float(v)


def nlp_dump(nlp: NlpProblem, z=None) -> dict:
    """JSON-ready description of the NLP, for cross-checking against external
    modelling tools.  Infinite bounds are written as null."""
    imap = nlp.index_map
    variables = []
    for idx in range(nlp.n_vars):
        kind, node, k = imap.locate(idx)
        names = nlp.system.state_names if kind == "state" else nlp.system.control_names
        variables.append(
            {
                "index": idx,
                "kind": kind,
                "node": node,
                "name": names[k],
                "lower": _json_bound(nlp.lower[idx]),
                "upper": _json_bound(nlp.upper[idx]),
            }
        )
    out = {
        "n_vars": nlp.n_vars,
        "n_eq": nlp.n_eq,
        "objective_index": nlp.objective_index,
        "grid": {"t0": nlp.grid.t0, "h": nlp.grid.h, "n_steps": nlp.grid.n_steps},
        "constraint_order": "node-major, state-minor: row = i*n_states + k",
        "variables": variables,
    }
    if z is not None:
        out["defects"] = [float(v) for v in nlp.constraints(z)]
    return out
