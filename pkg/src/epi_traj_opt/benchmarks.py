"""Small control systems with closed-form answers, used to validate the
integrators and solvers independently of the Dengue model."""

import numpy as np

from .model import ControlSystem


class ExponentialDecay(ControlSystem):
    """x' = -rate * x; no controls.  x(t) = x0 exp(-rate t)."""

    state_names = ("x",)
    control_names = ()

    def __init__(self, rate=1.0):
        self.rate = float(rate)

    def rhs(self, t, x, u):
        return -self.rate * np.asarray(x, float)

    def jac(self, t, x, u):
        x = np.asarray(x, float)
        lead = x.shape[:-1]
        fx = np.broadcast_to(-self.rate * np.eye(1), lead + (1, 1)).copy()
        return fx, np.zeros(lead + (1, 0))


class MinimumEnergyTransfer(ControlSystem):
    """x' = u with running cost u^2 accumulated in a second state.

    Steering x from 1 at t=0 to 0 at t=1 at minimum cost has the unique
    solution u = -1 with cost 1, on any uniform Euler grid.
    """

    state_names = ("x", "cost")
    control_names = ("u",)
    cost_index = 1

    def rhs(self, t, x, u):
        u = np.asarray(u, float)
        x = np.asarray(x, float)
        out = np.empty(np.broadcast_shapes(x.shape, u.shape[:-1] + (2,)))
        out[..., 0] = u[..., 0]
        out[..., 1] = u[..., 0] ** 2
        return out

    def jac(self, t, x, u):
        u = np.asarray(u, float)
        lead = u.shape[:-1]
        fx = np.zeros(lead + (2, 2))
        fu = np.zeros(lead + (2, 1))
        fu[..., 0, 0] = 1.0
        fu[..., 1, 0] = 2.0 * u[..., 0]
        return fx, fu

    def jac_structure(self):
        return np.zeros((2, 2), bool), np.ones((2, 1), bool)
