"""Optimal control of a Dengue transmission model.

Explicit-Euler direct transcription of the control problem, an in-repo
augmented-Lagrangian NLP solver, a single-shooting cross-check and a
verification suite.
"""

from .errors import ConfigError, DivergenceError, DomainError
from .integrator import (
    ControlSchedule,
    TimeGrid,
    Trajectory,
    euler_simulate,
    read_trajectory_csv,
    rk4_simulate,
    write_trajectory_csv,
)
from .model import (
    DEFAULT_INITIAL_STATE,
    Control,
    ControlSystem,
    DengueSystem,
    ParameterSet,
    State,
    cost_integrand,
    dynamics,
    dynamics_jacobian,
)
from .solver import SolveReport, SolverConfig, kkt_residuals, solve_nlp, solve_shooting
from .transcription import NlpProblem, extract_trajectory, pack, transcribe, transcription_report

__version__ = "0.1.0"

__all__ = [
    "ConfigError",
    "DivergenceError",
    "DomainError",
    "ControlSchedule",
    "TimeGrid",
    "Trajectory",
    "euler_simulate",
    "rk4_simulate",
    "read_trajectory_csv",
    "write_trajectory_csv",
    "DEFAULT_INITIAL_STATE",
    "Control",
    "ControlSystem",
    "DengueSystem",
    "ParameterSet",
    "State",
    "cost_integrand",
    "dynamics",
    "dynamics_jacobian",
    "SolveReport",
    "SolverConfig",
    "kkt_residuals",
    "solve_nlp",
    "solve_shooting",
    "NlpProblem",
    "extract_trajectory",
    "pack",
    "transcribe",
    "transcription_report",
]
