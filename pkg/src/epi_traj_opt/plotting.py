"""Optional static figures of a trajectory (needs the ``plot`` extra)."""

from __future__ import annotations

import os

from .errors import ConfigError

__all__ = ["save_trajectory_figures"]

_LABELS = {
    "x1": "mosquito density",
    "x2": "infected mosquito density",
    "x3": "infected humans",
    "x4": "goodwill",
    "x5": "accumulated cost",
    "u1": "insecticide",
    "u2": "education",
}


def save_trajectory_figures(traj, out_dir, prefix="fig") -> list[str]:
    """One PNG per state and control, named ``<prefix>_<name>.png``.
    Controls are drawn as steps over their intervals."""
    try:
        import matplotlib

        matplotlib.use("Agg")
        import matplotlib.pyplot as plt
    except ImportError:
        raise ConfigError("figures need matplotlib: install the 'plot' extra") from None

    t = traj.times
    series = [(name, traj.states[:, k], False) for k, name in enumerate(traj.state_names)]
    u = traj.controls.values
    for j in range(u.shape[1]):
        series.append((f"u{j + 1}", u[:, j], True))

    paths = []
    for name, values, is_control in series:
        fig, ax = plt.subplots(figsize=(6, 3.5))
        if is_control:
            ax.stairs(values, t)
        else:
            ax.plot(t, values)
        ax.set_xlabel("week")
        ax.set_ylabel(name)
        ax.set_title(_LABELS.get(name, name))
        ax.grid(alpha=0.3)
        fig.tight_layout()
        path = os.path.join(out_dir, f"{prefix}_{name}.png")
        fig.savefig(path, dpi=100)
        plt.close(fig)
        paths.append(path)
    return paths
