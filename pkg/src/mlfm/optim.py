"""Small dense BFGS with a Wolfe line search and Armijo backtracking fallback.

scipy's BFGS has no relative-objective stopping rule and does not expose the
accepted-step objective trace, both of which the fitting code relies on.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import line_search

ARMIJO_C1 = 1e-4
BACKTRACK = 0.5
MAX_BACKTRACKS = 50
STALL_STEPS = 3


@dataclass
class OptimResult:
    x: np.ndarray
    fun: float
    grad: np.ndarray
    nit: int
    converged: bool
    message: str
    history: list = field(default_factory=list)

    @property
    def grad_norm(self) -> float:
        return float(np.max(np.abs(self.grad))) if self.grad.size else 0.0


def _wolfe(fun, x, step, f, g, prev_f):
    """Strong-Wolfe step via scipy; ``(None, ..)`` if it fails or does not descend."""
    cache = {}

    def evaluate(z):
        key = z.tobytes()
        if key not in cache:
            cache[key] = fun(z)
        return cache[key]

    with warnings.catch_warnings():
        warnings.filterwarnings("ignore", message="The line search algorithm did not converge")
        t, _, _, f_new, _, _ = line_search(
            lambda z: evaluate(z)[0], lambda z: evaluate(z)[1], x, step, g, f, prev_f,
            c1=ARMIJO_C1, maxiter=30)
    if t is None or f_new is None or not np.isfinite(f_new) or not f_new < f:
        return None, None, None
    f_new, g_new = evaluate(x + t * step)
    return t, f_new, g_new


def bfgs(fun, x0, gtol=1e-6, ftol=1e-8, maxiter=500, max_step=1.0) -> OptimResult:
    """Minimise ``fun`` where ``fun(x)`` returns ``(value, gradient)``.

    Stops when the sup-norm of the gradient drops below ``gtol`` or an
    ``STALL_STEPS`` consecutive accepted steps each change the objective by
    less than ``ftol`` relative to its magnitude. The first step moves no
    coordinate by more than ``max_step``. ``history`` holds the objective after every accepted
    step; it is strictly decreasing.
    """
    x = np.array(x0, dtype=float).reshape(-1)
    f, g = fun(x)
    if not np.isfinite(f):
        raise FloatingPointError("objective is not finite at the starting point")
    n = x.size
    hinv = np.eye(n)
    history = [float(f)]
    first = True
    prev_f = None
    stalled = 0
    for it in range(maxiter):
        if np.max(np.abs(g), initial=0.0) < gtol:
            return OptimResult(x, f, g, it, True, "gradient tolerance", history)
        step = -hinv @ g
        slope = g @ step
        if slope >= 0 or first:
            hinv = np.eye(n)
            step = -g * min(1.0, max_step / np.max(np.abs(g)))
            slope = g @ step

        t, f_new, g_new = _wolfe(fun, x, step, f, g, prev_f)
        if t is None:
            t = 1.0
            for _ in range(MAX_BACKTRACKS):
                f_new, g_new = fun(x + t * step)
                if np.isfinite(f_new) and f_new <= f + ARMIJO_C1 * t * slope and f_new < f:
                    break
                t *= BACKTRACK
            else:
                # no representable decrease left: the objective change is zero
                return OptimResult(x, f, g, it, True, "no further decrease", history)
        x_new = x + t * step
        prev_f = f

        s = x_new - x
        y = g_new - g
        sy = s @ y
        if sy > 1e-12 * np.linalg.norm(s) * np.linalg.norm(y):
            if first:
                hinv = np.eye(n) * (sy / (y @ y))
                first = False
            rho = 1.0 / sy
            hy = hinv @ y
            hinv = (hinv - rho * (np.outer(s, hy) + np.outer(hy, s))
                    + (rho * rho * (y @ hy) + rho) * np.outer(s, s))

        rel = abs(f - f_new) / max(abs(f), abs(f_new), 1.0)
        x, f, g = x_new, f_new, g_new
        history.append(float(f))
        stalled = stalled + 1 if rel < ftol else 0
        if stalled >= STALL_STEPS:
            return OptimResult(x, f, g, it + 1, True, "objective tolerance", history)
    converged = np.max(np.abs(g), initial=0.0) < gtol
    return OptimResult(x, f, g, maxiter, bool(converged), "iteration limit", history)
