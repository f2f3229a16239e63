"""Augmented-Lagrangian solution of the transcribed NLP.

Sub-problems

    min  f(z) + lam' c(z) + (penalty/2) |c(z)|^2   s.t.  lower <= z <= upper

are solved with the bounded L-BFGS of :mod:`.lbfgs`.  Its initial inverse
Hessian is a sparse factorisation of ``penalty J'J + H`` on the free
variables, where J is the defect Jacobian and H the per-interval Lagrangian
curvature with absolute eigenvalues.  Both are re-evaluated along the inner
iterations: with a fixed J the penalty term goes stale as soon as the
bilinear dynamics move, and the inner solves stall.

Multipliers start at the discrete adjoint of ``z0``.  After each sub-problem
``lam <- lam + penalty c``; the penalty grows tenfold whenever the defect norm
failed to shrink by a factor of four.
"""

from __future__ import annotations

import csv
import io
import json
import math
import time
import warnings
from dataclasses import asdict, dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from ..errors import ConfigError, DomainError
from .lbfgs import minimize_box, projected_gradient

__all__ = [
    "SolverConfig",
    "SolveReport",
    "kkt_residuals",
    "solve_nlp",
    "SCALING_WARN_LEVEL",
]

SCALING_WARN_LEVEL = 1e3
HISTORY_COLUMNS = ("outer", "inner", "merit", "feas", "kkt", "penalty")


@dataclass(frozen=True)
class SolverConfig:
    tol_kkt: float = 1e-8
    tol_feas: float = 1e-8
    max_outer: int = 50
    max_inner: int = 500
    penalty_init: float = 10.0
    penalty_growth: float = 10.0
    seed: int = 0
    memory: int = 10
    precond_refresh: int = 5
    curvature_floor: float = 1e-8

    def __post_init__(self):
        for name in ("tol_kkt", "tol_feas", "penalty_init", "curvature_floor"):
            value = getattr(self, name)
            if not (isinstance(value, (int, float)) and math.isfinite(value) and value > 0):
                raise ConfigError(f"solver setting {name!r} must be positive, got {value!r}")
        for name in ("max_outer", "max_inner", "memory", "precond_refresh"):
            value = getattr(self, name)
            if isinstance(value, bool) or not isinstance(value, int) or value < 1:
                raise ConfigError(f"solver setting {name!r} must be an integer >= 1, got {value!r}")
        if not (math.isfinite(self.penalty_growth) and self.penalty_growth > 1):
            raise ConfigError("solver setting 'penalty_growth' must exceed 1")
        if isinstance(self.seed, bool) or not isinstance(self.seed, int):
            raise ConfigError("solver setting 'seed' must be an integer")

    @classmethod
    def from_dict(cls, data: dict) -> SolverConfig:
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown solver setting(s): {', '.join(sorted(unknown))}")
        return cls(**data)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class SolveReport:
    """Outcome of a solve.  ``history`` rows follow ``HISTORY_COLUMNS``."""

    status: str
    objective: float
    kkt_residual: float
    feasibility: float
    complementarity: float
    outer_iterations: int
    inner_iterations: int
    wall_time: float
    history: list = field(default_factory=list)
    method: str = "augmented-lagrangian"
    message: str = ""
    warnings: list = field(default_factory=list)
    multipliers: np.ndarray | None = field(default=None, repr=False)

    @property
    def converged(self) -> bool:
        return self.status == "converged"

    def to_dict(self, include_history: bool = True, include_timing: bool = True) -> dict:
        out = {
            "status": self.status,
            "method": self.method,
            "objective": self.objective,
            "kkt_residual": self.kkt_residual,
            "feasibility": self.feasibility,
            "complementarity": self.complementarity,
            "outer_iterations": self.outer_iterations,
            "inner_iterations": self.inner_iterations,
            "message": self.message,
            "warnings": list(self.warnings),
        }
        if include_timing:
            out["wall_time"] = self.wall_time
        if include_history:
            out["history"] = {
                "columns": list(HISTORY_COLUMNS),
                "rows": [list(r) for r in self.history],
            }
        return out

    def to_json(self, **kwargs) -> str:
        return json.dumps(self.to_dict(), **kwargs)

    def history_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(HISTORY_COLUMNS)
        for outer, inner, merit, feas, kkt, penalty in self.history:
            writer.writerow([outer, inner, repr(merit), repr(feas), repr(kkt), repr(penalty)])
        return buf.getvalue()


def kkt_residuals(nlp, z, multipliers) -> tuple[float, float, float]:
    """First-order residuals for ``min f s.t. c(z) = 0, lower <= z <= upper``.

    With Lagrangian gradient ``g = grad f + J' lam``:

    * stationarity: inf-norm of ``g`` projected onto the box (bound
      multipliers are implied by the sign of ``g`` at active bounds);
    * feasibility: inf-norm of the defects and of any bound violation;
    * complementarity: inf-norm of ``min(z - lower, max(g, 0))`` and
      ``min(upper - z, max(-g, 0))`` over finite, non-fixed bounds.
    """
    z = np.asarray(z, float)
    lam = np.asarray(multipliers, float)
    if z.shape != (nlp.n_vars,):
        raise DomainError(f"z must have length {nlp.n_vars}")
    if lam.shape != (nlp.n_eq,):
        raise DomainError(f"multipliers must have length {nlp.n_eq}")
    jac = nlp.jacobian_matrix(z)
    g = nlp.objective_gradient(z) + jac.T @ lam
    stationarity = float(np.max(np.abs(projected_gradient(z, g, nlp.lower, nlp.upper)), initial=0.0))

    c = nlp.constraints(z)
    bound_violation = np.maximum(nlp.lower - z, 0.0) + np.maximum(z - nlp.upper, 0.0)
    feasibility = float(max(np.max(np.abs(c), initial=0.0), np.max(bound_violation, initial=0.0)))

    free = nlp.lower != nlp.upper
    comp = 0.0
    lo = free & np.isfinite(nlp.lower)
    if lo.any():
        comp = max(comp, float(np.max(np.abs(np.minimum(z[lo] - nlp.lower[lo], np.maximum(g[lo], 0.0))))))
    hi = free & np.isfinite(nlp.upper)
    if hi.any():
        comp = max(comp, float(np.max(np.abs(np.minimum(nlp.upper[hi] - z[hi], np.maximum(-g[hi], 0.0))))))
    return stationarity, feasibility, comp


class _PenaltyPreconditioner:
    """Applies ``(penalty J'J + H)^{-1}`` restricted to a free set.

    ``J`` is the defect Jacobian and ``H`` the convexified Lagrangian
    curvature of :func:`_curvature_blocks`, both taken at the most recently
    evaluated point ``point()``.  The matrix is rebuilt every ``refresh``
    calls; ``generation`` counts rebuilds.  Sparse LU factors are cached per
    free mask within a generation.
    """

    def __init__(self, nlp, lam, penalty, floor, point, refresh=1):
        self.nlp = nlp
        self.lam = lam
        self.penalty = penalty
        self.floor = floor
        self.point = point
        self.refresh = refresh
        self.generation = 0
        self._calls = 0
        self._matrix = None
        self._cache = {}

    def _rebuild(self):
        x = self.point()
        jac = self.nlp.jacobian_matrix(x)
        curv = _curvature_blocks(self.nlp, x, self.lam, self.floor)
        self._matrix = (self.penalty * (jac.T @ jac) + curv).tocsc()
        self._cache = {}
        self.generation += 1

    def __call__(self, free):
        if self._matrix is None or self._calls % self.refresh == 0:
            self._rebuild()
        self._calls += 1
        key = free.tobytes()
        entry = self._cache.get(key)
        if entry is None:
            idx = np.nonzero(free)[0]
            lu = spla.splu(self._matrix[idx][:, idx].tocsc())
            if len(self._cache) > 32:
                self._cache.clear()
            entry = self._cache[key] = (idx, lu)
        idx, lu = entry

        def apply(v):
            out = np.zeros_like(v)
            out[idx] = lu.solve(v[idx])
            return out

        return apply


def _curvature_blocks(nlp, z, lam, floor, eps=1e-5):
    """Per-interval blocks of the Hessian of ``lam' c`` with respect to
    ``(x(i), u(i))``, made positive definite by taking absolute eigenvalues
    (floored at ``floor``).  Second derivatives come from central differences
    of the analytic dynamics Jacobian, exact for quadratic dynamics.  Returns
    a sparse matrix over all decision variables."""
    imap = nlp.index_map
    n, m, N = imap.n_states, imap.n_controls, imap.n_steps
    nv = n + m
    states, controls = imap.split(z)
    t = nlp.grid.times[:-1]
    x, u = states[:-1], controls
    weights = -nlp.grid.h * lam.reshape(N, n)
    blocks = np.zeros((N, nv, nv))
    for v in range(nv):
        dx = np.zeros(n)
        du = np.zeros(m)
        if v < n:
            dx[v] = eps
        else:
            du[v - n] = eps
        fx_p, fu_p = nlp.system.jac(t, x + dx, u + du)
        fx_m, fu_m = nlp.system.jac(t, x - dx, u - du)
        d2 = (np.concatenate([fx_p, fu_p], axis=2) - np.concatenate([fx_m, fu_m], axis=2)) / (2 * eps)
        blocks[:, v, :] = np.einsum("ik,ikw->iw", weights, d2)
    blocks = 0.5 * (blocks + blocks.transpose(0, 2, 1))
    w, V = np.linalg.eigh(blocks)
    blocks = np.einsum("iak,ik,ibk->iab", V, np.maximum(np.abs(w), floor), V)
    base = np.arange(N)[:, None] * imap.stride + np.arange(nv)[None, :]
    rows = np.repeat(base[:, :, None], nv, axis=2).ravel()
    cols = np.repeat(base[:, None, :], nv, axis=1).ravel()
    mat = sp.coo_matrix((blocks.ravel(), (rows, cols)), shape=(nlp.n_vars, nlp.n_vars))
    last = imap.state(N, np.arange(n))
    tail = sp.coo_matrix((np.full(n, floor), (last, last)), shape=mat.shape)
    return (mat + tail).tocsc()


def _adjoint_multipliers(nlp, z):
    """Multipliers solving ``J_x' lam = -grad_x f`` over the free states in
    the least-squares sense: the discrete adjoint of the trajectory ``z``."""
    jac = nlp.jacobian_matrix(z)
    states = np.zeros(nlp.n_vars, bool)
    for k in range(nlp.index_map.n_states):
        states[nlp.index_map.state(np.arange(nlp.grid.n_steps + 1), k)] = True
    cols = np.nonzero(states & ~nlp.fixed)[0]
    jx = jac[:, cols]
    gx = nlp.objective_gradient(z)[cols]
    normal = (jx @ jx.T).tocsc()
    try:
        return spla.splu(normal).solve(-(jx @ gx))
    except RuntimeError:
        return np.zeros(nlp.n_eq)


def solve_nlp(nlp, z0=None, cfg: SolverConfig | None = None):
    """Solve the transcribed problem; returns ``(z, report)``.

    ``z0`` defaults to the packed zero-control Euler trajectory and is
    projected onto the bounds.  ``report.multipliers`` holds the final defect
    multipliers.
    """
    cfg = cfg or SolverConfig()
    start = time.perf_counter()
    if z0 is None:
        from ..integrator import ControlSchedule, euler_simulate
        from ..transcription import pack

        x0 = nlp.lower[nlp.index_map.state(0, np.arange(nlp.index_map.n_states))]
        sched = ControlSchedule.zeros(nlp.grid, nlp.index_map.n_controls)
        z0 = pack(nlp, euler_simulate(x0, sched, nlp.system))
    z = nlp.project(np.asarray(z0, float))

    lam = _adjoint_multipliers(nlp, z)
    penalty = float(cfg.penalty_init)
    grad_f = nlp.objective_gradient(z)
    obj_idx = nlp.objective_index
    history = []
    notes = []
    total_inner = 0
    status = "iteration-cap"
    message = ""
    last = {}

    def merit(x):
        with np.errstate(over="ignore", invalid="ignore"):
            c = nlp.constraints(x)
            if not np.all(np.isfinite(c)):
                return np.inf, np.full_like(x, np.nan)
            w = lam + penalty * c
            _, _, vals = nlp.constraint_jacobian(x)
            g = grad_f + np.bincount(nlp.jac_cols, weights=vals * w[nlp.jac_rows], minlength=nlp.n_vars)
            value = x[obj_idx] + lam.dot(c) + 0.5 * penalty * c.dot(c)
        last["c"] = c
        last["x"] = x
        return value, g

    c = nlp.constraints(z)
    feas = float(np.max(np.abs(c), initial=0.0))
    inner_tol = max(cfg.tol_kkt, 1e-2)
    outer = 0
    for outer in range(1, cfg.max_outer + 1):
        feas_before = feas
        precond = _PenaltyPreconditioner(
            nlp, lam, penalty, cfg.curvature_floor, lambda: last["x"], refresh=cfg.precond_refresh
        )

        def record(x, value, pg_norm, _outer=outer):
            cc = last["c"]
            history.append(
                (_outer, len(history) + 1, float(value), float(np.max(np.abs(cc), initial=0.0)),
                 float(pg_norm), penalty)
            )

        res = minimize_box(
            merit, z, nlp.lower, nlp.upper,
            gtol=inner_tol, max_iter=cfg.max_inner, memory=cfg.memory,
            preconditioner=precond, callback=record,
        )
        total_inner += res.n_iter
        if res.status == "divergence" or not np.all(np.isfinite(res.x)):
            status, message = "divergence", f"inner solve diverged in outer iteration {outer}"
            z = res.x if np.all(np.isfinite(res.x)) else z
            break
        z = res.x
        c = nlp.constraints(z)
        feas = float(np.max(np.abs(c), initial=0.0))
        lam = lam + penalty * c

        stationarity, feas_full, _ = kkt_residuals(nlp, z, lam)
        if feas_full <= cfg.tol_feas and stationarity <= cfg.tol_kkt:
            status = "converged"
            break
        if feas > cfg.tol_feas and feas > feas_before / 4.0:
            penalty *= cfg.penalty_growth
        inner_tol = max(cfg.tol_kkt, min(0.1 * inner_tol, max(feas, cfg.tol_kkt)))

    if np.max(np.abs(z)) > SCALING_WARN_LEVEL:
        msg = f"decision variable magnitude exceeds {SCALING_WARN_LEVEL:g}; check scaling"
        warnings.warn(msg)
        notes.append(msg)
    stationarity, feasibility, complementarity = kkt_residuals(nlp, z, lam)
    if status == "iteration-cap":
        message = f"stopped after {outer} outer iterations"
    report = SolveReport(
        status=status,
        objective=float(z[obj_idx]),
        kkt_residual=stationarity,
        feasibility=feasibility,
        complementarity=complementarity,
        outer_iterations=outer,
        inner_iterations=total_inner,
        wall_time=time.perf_counter() - start,
        history=history,
        message=message,
        warnings=notes,
        multipliers=lam,
    )
    return z, report
