"""Fixed-step forward simulation under piecewise-constant controls.

Explicit Euler is the canonical discretisation (the optimisation problem is
built on it).  Classical RK4 with sub-stepping serves as an accuracy oracle.
"""

from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, DivergenceError, DomainError
from .model import ControlSystem, as_system

__all__ = [
    "DIVERGENCE_THRESHOLD",
    "TimeGrid",
    "ControlSchedule",
    "Trajectory",
    "euler_simulate",
    "rk4_simulate",
    "convergence_order",
    "write_trajectory_csv",
    "read_trajectory_csv",
]

DIVERGENCE_THRESHOLD = 1e6


@dataclass(frozen=True)
class TimeGrid:
    """Uniform grid t_i = t0 + i*h, i = 0..n_steps."""

    h: float
    n_steps: int
    t0: float = 0.0

    def __post_init__(self):
        if not (math.isfinite(self.h) and self.h > 0):
            raise ConfigError(f"step h must be positive and finite, got {self.h!r}")
        if int(self.n_steps) != self.n_steps or self.n_steps < 1:
            raise ConfigError(f"n_steps must be a positive integer, got {self.n_steps!r}")
        object.__setattr__(self, "n_steps", int(self.n_steps))

    @classmethod
    def uniform(cls, t_final: float, h: float) -> TimeGrid:
        if not (h > 0 and t_final > 0):
            raise ConfigError("t_final and h must be positive")
        n = round(t_final / h)
        if n < 1 or abs(n * h - t_final) > 64 * np.finfo(float).eps * t_final:
            raise ConfigError(f"step h={h!r} does not divide t_final={t_final!r}")
        return cls(float(h), n)

    @property
    def t_final(self) -> float:
        return self.t0 + self.n_steps * self.h

    @property
    def times(self) -> np.ndarray:
        return self.t0 + self.h * np.arange(self.n_steps + 1)

    def check_horizon(self, t_final: float):
        if abs(self.t_final - t_final) > 64 * np.finfo(float).eps * max(1.0, t_final):
            raise ConfigError(
                f"grid ends at t={self.t_final!r} but the horizon is t_final={t_final!r}"
            )


@dataclass(frozen=True)
class ControlSchedule:
    """Zero-order-hold controls: ``values[i]`` acts on [t_i, t_{i+1})."""

    grid: TimeGrid
    values: np.ndarray

    def __post_init__(self):
        values = np.array(self.values, dtype=float)
        if values.ndim == 1:
            values = values[:, None]
        if values.ndim != 2 or values.shape[0] != self.grid.n_steps:
            raise DomainError(
                f"control schedule needs {self.grid.n_steps} rows, got shape {values.shape}"
            )
        if not np.all(np.isfinite(values)):
            raise DomainError("control schedule contains non-finite values")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    @classmethod
    def constant(cls, grid: TimeGrid, control) -> ControlSchedule:
        control = np.atleast_1d(np.asarray(control, float))
        return cls(grid, np.tile(control, (grid.n_steps, 1)))

    @classmethod
    def zeros(cls, grid: TimeGrid, n_controls: int = 2) -> ControlSchedule:
        return cls(grid, np.zeros((grid.n_steps, n_controls)))

    @property
    def n_controls(self) -> int:
        return self.values.shape[1]

    def resample(self, grid: TimeGrid) -> ControlSchedule:
        """Zero-order-hold resampling onto another grid over the same horizon."""
        left = grid.times[:-1]
        # small offset keeps nodes shared by both grids in the right interval
        idx = np.floor((left - self.grid.t0) / self.grid.h + 1e-9).astype(int)
        idx = np.clip(idx, 0, self.grid.n_steps - 1)
        return ControlSchedule(grid, self.values[idx])


@dataclass(frozen=True)
class Trajectory:
    grid: TimeGrid
    states: np.ndarray
    controls: ControlSchedule
    state_names: tuple = ("x1", "x2", "x3", "x4", "x5")
    cost_index: int | None = 4
    warnings: tuple = field(default=(), compare=False)

    def __post_init__(self):
        states = np.array(self.states, dtype=float)
        if states.shape[0] != self.grid.n_steps + 1:
            raise DomainError(
                f"trajectory needs {self.grid.n_steps + 1} states, got {states.shape[0]}"
            )
        states.setflags(write=False)
        object.__setattr__(self, "states", states)

    @property
    def times(self) -> np.ndarray:
        return self.grid.times

    @property
    def total_cost(self) -> float:
        if self.cost_index is None:
            return math.nan
        return float(self.states[-1, self.cost_index])

    def column(self, name: str) -> np.ndarray:
        return self.states[:, self.state_names.index(name)]

    def diagnostics(self, p=None) -> list[str]:
        """Model-intent violations of the Dengue states (Euler may undershoot;
        these are reported, never enforced)."""
        if self.state_names[:5] != ("x1", "x2", "x3", "x4", "x5"):
            return []
        pop = 1.0 if p is None else p.p
        x1, x2, x3, x4, x5 = self.states.T
        tol = 1e-12
        checks = {
            "x2 > x1": x2 - x1,
            "x3 < 0": -x3,
            "x3 > p": x3 - pop,
            "x1 < 0": -x1,
            "x2 < 0": -x2,
            "x4 < 0": -x4,
            "x5 < 0": -x5,
        }
        out = []
        for label, excess in checks.items():
            bad = np.nonzero(excess > tol)[0]
            if bad.size:
                out.append(
                    f"{label} at {bad.size} node(s), first t={self.times[bad[0]]:g}, "
                    f"worst excess {excess.max():.3g}"
                )
        return out


def _prepare(initial, schedule, system):
    system = as_system(system)
    x0 = np.array(initial, dtype=float)
    if x0.shape != (system.n_states,):
        raise DomainError(f"initial state must have {system.n_states} entries")
    if not np.all(np.isfinite(x0)):
        raise DomainError("initial state contains non-finite values")
    if system.cost_index is not None and x0[system.cost_index] != 0.0:
        raise DomainError("the accumulated-cost state must start at 0")
    if schedule.n_controls != system.n_controls:
        raise DomainError(
            f"schedule has {schedule.n_controls} controls, system expects {system.n_controls}"
        )
    params = getattr(system, "params", None)
    if params is not None:
        schedule.grid.check_horizon(params.t_final)
    return system, x0


def _diverged(x):
    return not np.all(np.isfinite(x)) or np.max(np.abs(x)) > DIVERGENCE_THRESHOLD


def _finish(system, schedule, states):
    return Trajectory(
        schedule.grid, states, schedule,
        state_names=tuple(system.state_names), cost_index=system.cost_index,
    )


def _raise_divergence(system, schedule, states, step):
    partial = states[: step + 1]
    raise DivergenceError(
        f"state left the region |x| <= {DIVERGENCE_THRESHOLD:g} at step {step}",
        step=step,
        partial=partial,
    )


def euler_simulate(initial, schedule: ControlSchedule, params=None) -> Trajectory:
    """x_{i+1} = x_i + h f(t_i, x_i, u_i).

    ``params`` is a :class:`~epi_traj_opt.model.ParameterSet` (Dengue model)
    or any :class:`~epi_traj_opt.model.ControlSystem`.
    """
    system, x = _prepare(initial, schedule, params)
    grid = schedule.grid
    h = grid.h
    times = grid.times
    u = schedule.values
    states = np.empty((grid.n_steps + 1, system.n_states))
    states[0] = x
    with np.errstate(over="ignore", invalid="ignore"):
        for i in range(grid.n_steps):
            x = x + h * system.rhs(times[i], x, u[i])
            if _diverged(x):
                _raise_divergence(system, schedule, states, i)
            states[i + 1] = x
    return _finish(system, schedule, states)


def rk4_simulate(initial, schedule: ControlSchedule, params=None, refine: int = 25) -> Trajectory:
    """Classical RK4 with ``refine`` sub-steps per control interval.

    Only the grid nodes are returned.  Meant for verification, not for the
    optimisation problem itself.
    """
    if int(refine) != refine or refine < 1:
        raise ConfigError(f"refine must be a positive integer, got {refine!r}")
    system, x = _prepare(initial, schedule, params)
    grid = schedule.grid
    dt = grid.h / refine
    u = schedule.values
    times = grid.times
    states = np.empty((grid.n_steps + 1, system.n_states))
    states[0] = x
    f = system.rhs
    with np.errstate(over="ignore", invalid="ignore"):
        for i in range(grid.n_steps):
            ui = u[i]
            for j in range(refine):
                t = times[i] + j * dt
                k1 = f(t, x, ui)
                k2 = f(t + 0.5 * dt, x + 0.5 * dt * k1, ui)
                k3 = f(t + 0.5 * dt, x + 0.5 * dt * k2, ui)
                k4 = f(t + dt, x + dt * k3, ui)
                x = x + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
            if _diverged(x):
                _raise_divergence(system, schedule, states, i)
            states[i + 1] = x
    return _finish(system, schedule, states)


def convergence_order(
    initial,
    schedule: ControlSchedule,
    params=None,
    h_list=(1.0, 0.5, 0.25, 0.125),
    method: str = "euler",
    reference_refine: int = 64,
):
    """Empirical global order of accuracy of ``method`` ('euler' or 'rk4').

    Each run uses ``schedule`` resampled onto a grid of step h; its error is
    the max absolute deviation, over all states and over the nodes of the
    coarsest grid, from an RK4 reference computed on the finest grid with
    ``reference_refine`` sub-steps.  Returns ``(slope, hs, errors)`` where the
    slope is the least-squares fit of log(error) against log(h).
    """
    system = as_system(params)
    hs = sorted((float(h) for h in h_list), reverse=True)
    if len(hs) < 3:
        raise ConfigError("need at least three step sizes")
    t_final = schedule.grid.t_final
    grids = [TimeGrid.uniform(t_final, h) for h in hs]
    coarse = grids[0]
    for g in grids:
        ratio = g.n_steps / coarse.n_steps
        if ratio != int(ratio):
            raise ConfigError("step sizes must produce nested grids")

    ref_grid = grids[-1]
    reference = rk4_simulate(initial, schedule.resample(ref_grid), system, refine=reference_refine)
    stride_ref = ref_grid.n_steps // coarse.n_steps
    ref_nodes = reference.states[::stride_ref]

    simulate = {"euler": euler_simulate, "rk4": lambda x0, s, p: rk4_simulate(x0, s, p, refine=1)}
    try:
        run = simulate[method]
    except KeyError:
        raise ConfigError(f"unknown method {method!r}") from None

    used_h, errors = [], []
    for g in grids:
        try:
            traj = run(initial, schedule.resample(g), system)
        except DivergenceError as exc:
            warnings.warn(f"h={g.h:g} run diverged ({exc}); excluded from the fit")
            continue
        stride = g.n_steps // coarse.n_steps
        err = np.max(np.abs(traj.states[::stride] - ref_nodes))
        used_h.append(g.h)
        errors.append(err)
    if len(used_h) < 2:
        raise DivergenceError("fewer than two runs converged; no order estimate")
    slope = np.polyfit(np.log(used_h), np.log(errors), 1)[0]
    return float(slope), np.array(used_h), np.array(errors)


def _csv_header(traj: Trajectory) -> list[str]:
    control_names = [f"u{j + 1}" for j in range(traj.controls.n_controls)]
    return ["t", *traj.state_names, *control_names]


def write_trajectory_csv(traj: Trajectory, path) -> None:
    """One row per grid node; the last row repeats the final control."""
    u = traj.controls.values
    u_nodes = np.vstack([u, u[-1:]])
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(_csv_header(traj))
        for t, x, ui in zip(traj.times, traj.states, u_nodes):
            writer.writerow([f"{v:.17g}" for v in (t, *x, *ui)])


def read_trajectory_csv(path, n_states: int = 5):
    """Inverse of :func:`write_trajectory_csv`.  Returns ``(times, states,
    controls)`` with controls trimmed back to one row per interval."""
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    header, body = rows[0], np.array(rows[1:], dtype=float)
    if header[0] != "t":
        raise DomainError(f"unexpected trajectory header {header!r}")
    times = body[:, 0]
    states = body[:, 1 : 1 + n_states]
    controls = body[:-1, 1 + n_states :]
    return times, states, controls
