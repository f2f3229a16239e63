"""Dengue transmission model with insecticide and education controls.

States
------
x1  density of mosquitoes
x2  density of mosquitoes carrying the virus
x3  (normalised) number of infected individuals
x4  level of popular motivation to fight the mosquito ("goodwill")
x5  accumulated cost, so that the running cost becomes a terminal one

Controls
--------
u1  investment in insecticide spraying
u2  investment in educational campaigns
"""

from __future__ import annotations

import dataclasses
import json
import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .errors import ConfigError, DomainError

__all__ = [
    "ParameterSet",
    "State",
    "Control",
    "DEFAULT_INITIAL_STATE",
    "ControlSystem",
    "DengueSystem",
    "dynamics",
    "cost_integrand",
    "dynamics_jacobian",
    "seasonal_factor",
]

_RATE_FIELDS = (
    "alpha_r", "alpha_m", "beta", "eta", "rho", "theta", "tau", "omega",
    "gamma_d", "gamma_f", "gamma_e",
)


@dataclass(frozen=True)
class ParameterSet:
    """Model constants.  Defaults are the normalised values used for the
    52-week Dengue scenario; time is measured in weeks."""

    alpha_r: float = 0.20
    alpha_m: float = 0.18
    beta: float = 0.3
    eta: float = 0.15
    mu: float = 0.1
    rho: float = 0.1
    theta: float = 0.05
    tau: float = 0.1
    phi: float = 0.0
    omega: float = 2.0 * math.pi / 52.0
    p: float = 1.0
    gamma_d: float = 1.0
    gamma_f: float = 0.4
    gamma_e: float = 0.8
    t_final: float = 52.0

    def __post_init__(self):
        for f in dataclasses.fields(self):
            value = getattr(self, f.name)
            if isinstance(value, bool) or not isinstance(value, (int, float)):
                raise ConfigError(f"parameter {f.name!r} must be a number, got {value!r}")
            if not math.isfinite(value):
                raise ConfigError(f"parameter {f.name!r} must be finite, got {value!r}")
            object.__setattr__(self, f.name, float(value))
        for name in _RATE_FIELDS:
            if getattr(self, name) < 0:
                raise ConfigError(f"parameter {name!r} must be nonnegative")
        if not 0.0 <= self.mu <= 1.0:
            raise ConfigError("parameter 'mu' must lie in [0, 1]")
        if self.p <= 0:
            raise ConfigError("parameter 'p' must be positive")
        if self.t_final <= 0:
            raise ConfigError("parameter 't_final' must be positive")

    @classmethod
    def field_names(cls) -> tuple[str, ...]:
        return tuple(f.name for f in dataclasses.fields(cls))

    def replace(self, **changes) -> ParameterSet:
        unknown = set(changes) - set(self.field_names())
        if unknown:
            raise ConfigError(f"unknown parameter(s): {', '.join(sorted(unknown))}")
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> ParameterSet:
        """Build from a flat mapping; missing keys take defaults, unknown keys
        are rejected."""
        if not isinstance(data, dict):
            raise ConfigError("parameter set must be a JSON object")
        return cls().replace(**data)

    def to_json(self, **kwargs) -> str:
        return json.dumps(self.to_dict(), **kwargs)

    @classmethod
    def from_json(cls, text: str) -> ParameterSet:
        return cls.from_dict(json.loads(text))


class State(NamedTuple):
    x1: float
    x2: float
    x3: float
    x4: float
    x5: float = 0.0


class Control(NamedTuple):
    u1: float = 0.0
    u2: float = 0.0


DEFAULT_INITIAL_STATE = State(1.0, 0.12, 0.004, 0.05, 0.0)


def _check_finite(**fields):
    for name, value in fields.items():
        if not np.all(np.isfinite(value)):
            raise DomainError(f"non-finite value for {name!r}: {value!r}")


def _check_inputs(t, s, c):
    _check_finite(t=t)
    _check_finite(**{f: v for f, v in zip(State._fields, s)})
    _check_finite(**{f: v for f, v in zip(Control._fields, c)})


def seasonal_factor(t, p: ParameterSet):
    """Mosquito reproduction rate alpha_R * (1 - mu sin(omega t + phi))."""
    return p.alpha_r * (1.0 - p.mu * np.sin(p.omega * t + p.phi))


def _rates(t, x1, x2, x3, x4, u1, u2, p):
    # Shared by the float, vectorised and dual-number paths.
    growth = seasonal_factor(t, p) - p.alpha_m - x4
    return (
        growth * x1 - u1,
        growth * x2 + p.beta * (x1 - x2) * x3 - u1,
        -p.eta * x3 + p.rho * x2 * (p.p - x3),
        -p.tau * x4 + p.theta * x3 + u2,
        p.gamma_d * x3**2 + p.gamma_f * u1**2 + p.gamma_e * u2**2,
    )


def dynamics(t: float, s, c, p: ParameterSet) -> np.ndarray:
    """Time derivative of the augmented state (x1, ..., x5)."""
    _check_inputs(t, s, c)
    x1, x2, x3, x4, _ = s
    u1, u2 = c
    return np.array(_rates(t, x1, x2, x3, x4, u1, u2, p), dtype=float)


def cost_integrand(s, c, p: ParameterSet) -> float:
    """Running cost gamma_D x3^2 + gamma_F u1^2 + gamma_E u2^2."""
    _check_inputs(0.0, s, c)
    x3 = s[2]
    u1, u2 = c
    return float(p.gamma_d * x3**2 + p.gamma_f * u1**2 + p.gamma_e * u2**2)


def _jacobians(t, x, u, p):
    x1, x2, x3, x4 = (x[..., k] for k in range(4))
    u1, u2 = u[..., 0], u[..., 1]
    shape = np.broadcast_shapes(np.shape(t), x1.shape)
    growth = seasonal_factor(t, p) - p.alpha_m - x4

    fx = np.zeros(shape + (5, 5))
    fx[..., 0, 0] = growth
    fx[..., 0, 3] = -x1
    fx[..., 1, 0] = p.beta * x3
    fx[..., 1, 1] = growth - p.beta * x3
    fx[..., 1, 2] = p.beta * (x1 - x2)
    fx[..., 1, 3] = -x2
    fx[..., 2, 1] = p.rho * (p.p - x3)
    fx[..., 2, 2] = -p.eta - p.rho * x2
    fx[..., 3, 2] = p.theta
    fx[..., 3, 3] = -p.tau
    fx[..., 4, 2] = 2.0 * p.gamma_d * x3

    fu = np.zeros(shape + (5, 2))
    fu[..., 0, 0] = -1.0
    fu[..., 1, 0] = -1.0
    fu[..., 3, 1] = 1.0
    fu[..., 4, 0] = 2.0 * p.gamma_f * u1
    fu[..., 4, 1] = 2.0 * p.gamma_e * u2
    return fx, fu


def dynamics_jacobian(t: float, s, c, p: ParameterSet) -> tuple[np.ndarray, np.ndarray]:
    """Partial derivatives of :func:`dynamics`: ``(df/ds (5x5), df/dc (5x2))``."""
    _check_inputs(t, s, c)
    return _jacobians(t, np.asarray(s, float), np.asarray(c, float), p)


class ControlSystem:
    """Interface between an ODE control model and the simulation/transcription
    machinery.

    ``rhs`` and ``jac`` are vectorised: ``x`` has shape ``(..., n_states)``,
    ``u`` shape ``(..., n_controls)`` and ``t`` broadcasts against the leading
    axes.  ``cost_index`` names the state accumulating the running cost, if any.
    """

    state_names: tuple[str, ...] = ()
    control_names: tuple[str, ...] = ()
    cost_index: int | None = None

    @property
    def n_states(self) -> int:
        return len(self.state_names)

    @property
    def n_controls(self) -> int:
        return len(self.control_names)

    def rhs(self, t, x, u) -> np.ndarray:
        raise NotImplementedError

    def jac(self, t, x, u) -> tuple[np.ndarray, np.ndarray]:
        raise NotImplementedError

    def jac_structure(self) -> tuple[np.ndarray, np.ndarray]:
        """Boolean masks of the structurally nonzero entries of ``jac``."""
        return (
            np.ones((self.n_states, self.n_states), bool),
            np.ones((self.n_states, self.n_controls), bool),
        )


class DengueSystem(ControlSystem):
    state_names = State._fields
    control_names = Control._fields
    cost_index = 4

    def __init__(self, params: ParameterSet | None = None):
        self.params = params if params is not None else ParameterSet()

    def __repr__(self):
        return f"DengueSystem({self.params!r})"

    def rhs(self, t, x, u):
        x = np.asarray(x, float)
        u = np.asarray(u, float)
        if x.ndim == 1 and u.ndim == 1 and np.ndim(t) == 0:
            # single-node fast path for the sequential integrators
            x1, x2, x3, x4 = x[:4].tolist()
            u1, u2 = u.tolist()
            p = self.params
            growth = p.alpha_r * (1.0 - p.mu * math.sin(p.omega * t + p.phi)) - p.alpha_m - x4
            return np.array((
                growth * x1 - u1,
                growth * x2 + p.beta * (x1 - x2) * x3 - u1,
                -p.eta * x3 + p.rho * x2 * (p.p - x3),
                -p.tau * x4 + p.theta * x3 + u2,
                p.gamma_d * x3**2 + p.gamma_f * u1**2 + p.gamma_e * u2**2,
            ))
        terms = _rates(t, *(x[..., k] for k in range(4)), u[..., 0], u[..., 1], self.params)
        return np.stack(np.broadcast_arrays(*terms), axis=-1)

    def jac(self, t, x, u):
        return _jacobians(t, np.asarray(x, float), np.asarray(u, float), self.params)

    def jac_structure(self):
        fx = np.zeros((5, 5), bool)
        fx[0, [0, 3]] = True
        fx[1, [0, 1, 2, 3]] = True
        fx[2, [1, 2]] = True
        fx[3, [2, 3]] = True
        fx[4, 2] = True
        fu = np.zeros((5, 2), bool)
        fu[[0, 1, 4], 0] = True
        fu[[3, 4], 1] = True
        return fx, fu

    def dual_rhs(self, t, args):
        """Right-hand side on a flat sequence (x1..x5, u1, u2) of possibly
        dual-number entries; used as the forward-mode differentiation route."""
        x1, x2, x3, x4, _x5, u1, u2 = args
        return _rates(t, x1, x2, x3, x4, u1, u2, self.params)


def as_system(obj) -> ControlSystem:
    if isinstance(obj, ControlSystem):
        return obj
    if isinstance(obj, ParameterSet):
        return DengueSystem(obj)
    if obj is None:
        return DengueSystem()
    raise TypeError(f"expected a ParameterSet or ControlSystem, got {type(obj).__name__}")
