"""Week-granularity trajectory metrics, linearly interpolated between nodes."""

from __future__ import annotations

import numpy as np

__all__ = [
    "crossing_week",
    "decrease_onset_week",
    "peak",
    "control_fraction",
    "trajectory_metrics",
]


def crossing_week(times, y, threshold):
    """First time ``y`` drops strictly below ``threshold``, interpolated
    linearly inside the interval where it happens.  None if it never does."""
    times = np.asarray(times, float)
    y = np.asarray(y, float)
    below = np.nonzero(y < threshold)[0]
    if below.size == 0:
        return None
    i = int(below[0])
    if i == 0:
        return float(times[0])
    y0, y1 = y[i - 1], y[i]
    frac = (y0 - threshold) / (y0 - y1)
    return float(times[i - 1] + frac * (times[i] - times[i - 1]))


def decrease_onset_week(times, y, tol=0.0):
    """Earliest time after which ``y`` never increases (by more than
    ``tol`` per interval) until the end of the horizon.

    This is the right end of the last increasing interval, or the initial
    time for a non-increasing series.  None if the series still increases on
    the final interval.
    """
    times = np.asarray(times, float)
    rising = np.nonzero(np.diff(np.asarray(y, float)) > tol)[0]
    if rising.size == 0:
        return float(times[0])
    last = int(rising[-1])
    if last == len(times) - 2:
        return None
    return float(times[last + 1])


def peak(times, y):
    """``(max value, time of first maximum)``."""
    y = np.asarray(y, float)
    i = int(np.argmax(y))
    return float(y[i]), float(np.asarray(times, float)[i])


def control_fraction(grid, u, t_end):
    """Share of ``int u dt`` accumulated on ``[t0, t_end]`` for a piecewise
    constant control on ``grid``.  Zero total gives 0."""
    u = np.asarray(u, float)
    times = grid.times
    overlap = np.clip(np.minimum(times[1:], t_end) - times[:-1], 0.0, grid.h)
    total = float(np.sum(u) * grid.h)
    if total == 0.0:
        return 0.0
    return float(np.sum(u * overlap) / total)


def trajectory_metrics(traj) -> dict:
    """Headline numbers used to compare two trajectories."""
    t = traj.times
    x1, x2, x3 = traj.states[:, 0], traj.states[:, 1], traj.states[:, 2]
    return {
        "total_cost": traj.total_cost,
        "x2_below_1pct_week": crossing_week(t, x2, 0.01 * x2[0]),
        "x1_below_1pct_week": crossing_week(t, x1, 0.01 * x1[0]),
        "x3_decrease_week": decrease_onset_week(t, x3),
    }
