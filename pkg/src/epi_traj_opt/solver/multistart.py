"""Multi-start diagnostic for local-minimum traps."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import DivergenceError
from ..integrator import ControlSchedule, euler_simulate
from ..transcription import pack
from .auglag import SolveReport, SolverConfig, solve_nlp

__all__ = ["MultiStartResult", "multistart"]


@dataclass
class MultiStartResult:
    objectives: np.ndarray
    reports: list[SolveReport]

    @property
    def spread(self) -> float:
        """Relative spread ``(max - min) / max(|min|, 1e-12)`` of the converged
        objectives; infinite if any start failed to converge."""
        if not all(r.converged for r in self.reports):
            return float("inf")
        lo, hi = float(np.min(self.objectives)), float(np.max(self.objectives))
        return (hi - lo) / max(abs(lo), 1e-12)


def multistart(nlp, n_starts=5, cfg: SolverConfig | None = None, *, low=0.0, high=0.5):
    """Solve from ``n_starts`` random control schedules, uniform in
    ``[low, high]``, drawn from ``cfg.seed``.

    States of each start come from simulating its controls.  If that
    simulation diverges the zero-control states are used instead, giving an
    infeasible start that the augmented Lagrangian tolerates.
    """
    cfg = cfg or SolverConfig()
    rng = np.random.default_rng(cfg.seed)
    imap = nlp.index_map
    x0 = nlp.lower[imap.state(0, np.arange(imap.n_states))]
    fallback = euler_simulate(x0, ControlSchedule.zeros(nlp.grid, imap.n_controls), nlp.system)
    objectives, reports = [], []
    for _ in range(n_starts):
        u = rng.uniform(low, high, (nlp.grid.n_steps, imap.n_controls))
        sched = ControlSchedule(nlp.grid, u)
        try:
            z0 = pack(nlp, euler_simulate(x0, sched, nlp.system))
        except DivergenceError:
            z0 = imap.join(fallback.states, u)
        _, report = solve_nlp(nlp, z0, cfg)
        objectives.append(report.objective)
        reports.append(report)
    return MultiStartResult(np.array(objectives), reports)
