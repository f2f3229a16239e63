"""Limited-memory BFGS with gradient projection onto box bounds.

Two-metric projection in the style of Bertsekas' projected Newton method:
variables that are (nearly) at a bound with the gradient pushing outward are
moved by projected steepest descent, the remaining free variables by an
L-BFGS direction restricted to the free subspace.  Steps are taken along
the projection arc ``P(x + alpha d)`` with Armijo backtracking.

An optional preconditioner replaces the scalar initial inverse Hessian of the
two-loop recursion.  It is called with the boolean free-variable mask and
must return a function applying an SPD approximation of the inverse Hessian
restricted to those variables.  A preconditioner may be rebuilt as the
iterate moves; if it exposes an integer ``generation`` attribute, stored
curvature pairs are discarded whenever that number changes, since they
were collected relative to a different initial matrix.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field

import numpy as np

__all__ = ["BoxResult", "projected_gradient", "minimize_box"]


@dataclass
class BoxResult:
    x: np.ndarray
    fun: float
    grad: np.ndarray
    pg_norm: float
    n_iter: int
    n_eval: int
    status: str
    message: str = ""
    history: list = field(default_factory=list)


def projected_gradient(x, g, lower, upper):
    """Gradient with components that point out of the box at an active bound
    removed.  Fixed variables (``lower == upper``) get zero."""
    pg = np.array(g, dtype=float)
    at_lower = x <= lower
    at_upper = x >= upper
    pg[at_lower] = np.minimum(pg[at_lower], 0.0)
    pg[at_upper] = np.maximum(pg[at_upper], 0.0)
    pg[lower == upper] = 0.0
    return pg


def _two_loop(q, pairs, apply_h0):
    alphas = []
    for s, y, rho in reversed(pairs):
        a = rho * s.dot(q)
        alphas.append(a)
        q = q - a * y
    r = apply_h0(q)
    for (s, y, rho), a in zip(pairs, reversed(alphas)):
        b = rho * y.dot(r)
        r = r + (a - b) * s
    return r


def minimize_box(
    fun,
    x0,
    lower,
    upper,
    *,
    gtol: float = 1e-8,
    max_iter: int = 500,
    memory: int = 10,
    c1: float = 1e-4,
    max_backtracks: int = 50,
    preconditioner=None,
    callback=None,
) -> BoxResult:
    """Minimise ``fun`` over ``lower <= x <= upper``.

    ``fun(x)`` returns ``(f, g)``; a non-finite ``f`` makes the line search
    backtrack.  Stops when the infinity norm of the projected gradient drops
    to ``gtol``.  ``callback(x, f, pg_norm)`` runs after every accepted step.
    """
    lower = np.asarray(lower, float)
    upper = np.asarray(upper, float)
    x = np.clip(np.asarray(x0, float), lower, upper)
    fixed = lower == upper
    f, g = fun(x)
    n_eval = 1
    if not np.isfinite(f) or not np.all(np.isfinite(g)):
        return BoxResult(x, f, g, np.inf, 0, n_eval, "divergence", "non-finite start")

    pairs = deque(maxlen=memory)
    gamma = 1.0
    last_generation = getattr(preconditioner, "generation", None)
    history = []
    status, message = "iteration-cap", ""
    it = 0
    while True:
        pg = projected_gradient(x, g, lower, upper)
        pg_norm = float(np.max(np.abs(pg), initial=0.0))
        if pg_norm <= gtol:
            status = "converged"
            break
        if it >= max_iter:
            break
        it += 1

        # epsilon-active set
        w = float(np.max(np.abs(x - np.clip(x - g, lower, upper)), initial=0.0))
        eps = min(1e-3, w)
        active = fixed | ((x <= lower + eps) & (g > 0)) | ((x >= upper - eps) & (g < 0))
        free = ~active

        q = np.where(free, g, 0.0)
        masked = []
        for s, y, _ in pairs:
            sf, yf = np.where(free, s, 0.0), np.where(free, y, 0.0)
            sy = sf.dot(yf)
            if sy > 1e-12 * np.linalg.norm(sf) * np.linalg.norm(yf):
                masked.append((sf, yf, 1.0 / sy))
        if preconditioner is not None:
            h0 = preconditioner(free)
            generation = getattr(preconditioner, "generation", None)
            if generation != last_generation:
                last_generation = generation
                pairs.clear()
                masked = []
        else:
            h0 = lambda v: gamma * v  # noqa: E731
        d = -_two_loop(q, masked, h0)
        d[~free] = 0.0
        scale = gamma if preconditioner is None else 1.0
        d[active & ~fixed] = -scale * g[active & ~fixed]

        slope = g.dot(d)
        if not slope < 0:
            pairs.clear()
            d = -np.where(fixed, 0.0, pg) * (gamma if preconditioner is None else 1.0)
            slope = g.dot(d)
            if not slope < 0:
                status, message = "stalled", "no descent direction"
                break

        alpha = 1.0
        accepted = False
        for _ in range(max_backtracks):
            x_new = np.clip(x + alpha * d, lower, upper)
            step = x_new - x
            f_new, g_new = fun(x_new)
            n_eval += 1
            if np.isfinite(f_new) and f_new <= f + c1 * g.dot(step):
                accepted = True
                break
            alpha *= 0.5
        if not accepted:
            if pairs:
                pairs.clear()
                continue
            status, message = "stalled", "line search failed"
            break
        if not np.all(np.isfinite(g_new)):
            status, message = "divergence", "non-finite gradient"
            break

        s = x_new - x
        y = g_new - g
        sy = s.dot(y)
        if sy > 1e-12 * np.linalg.norm(s) * np.linalg.norm(y):
            pairs.append((s, y, 1.0 / sy))
            gamma = sy / y.dot(y)
        x, f, g = x_new, f_new, g_new
        pgn = float(np.max(np.abs(projected_gradient(x, g, lower, upper)), initial=0.0))
        history.append((it, f, pgn))
        if callback is not None:
            callback(x, f, pgn)
        if not np.all(np.isfinite(x)):
            status, message = "divergence", "non-finite iterate"
            break

    pg = projected_gradient(x, g, lower, upper)
    pg_norm = float(np.max(np.abs(pg), initial=0.0))
    return BoxResult(x, f, g, pg_norm, it, n_eval, status, message, history)
