"""NLP solvers: full-space augmented Lagrangian and reduced single shooting."""

from .auglag import SolveReport, SolverConfig, kkt_residuals, solve_nlp
from .lbfgs import minimize_box, projected_gradient
from .multistart import MultiStartResult, multistart
from .shooting import shooting_objective, solve_shooting

__all__ = [
    "SolveReport",
    "SolverConfig",
    "kkt_residuals",
    "solve_nlp",
    "minimize_box",
    "projected_gradient",
    "MultiStartResult",
    "multistart",
    "shooting_objective",
    "solve_shooting",
]
