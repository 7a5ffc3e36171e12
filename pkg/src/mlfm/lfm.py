"""Forward solution of the additive first-order latent force model.

``dx/dt = -D x + b + S g(t)`` with diagonal ``D`` has the explicit solution
``x(t) = e^{-D(t-t0)} x0 + ∫ e^{-D(t-τ)} dτ b + ∫ e^{-D(t-τ)} S g(τ) dτ``.
The last integral is evaluated with the grid's quadrature rule.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .quadrature import QuadratureRule, TimeGrid


@dataclass(frozen=True)
class LfmParams:
    decay: np.ndarray        # D, diagonal entries, length K
    offset: np.ndarray       # b, length K
    sensitivity: np.ndarray  # S, K x R

    def __post_init__(self):
        d = np.asarray(self.decay, dtype=float).reshape(-1)
        b = np.asarray(self.offset, dtype=float).reshape(-1)
        s = np.asarray(self.sensitivity, dtype=float)
        if s.ndim == 1:
            s = s[:, None]
        if not (d.size == b.size == s.shape[0]):
            raise ValueError("D, b and S disagree on the state dimension")
        object.__setattr__(self, "decay", d)
        object.__setattr__(self, "offset", b)
        object.__setattr__(self, "sensitivity", s)


def _phi1(decay, lag):
    # (1 - e^{-d τ}) / d, continuous at d = 0
    dl = decay * lag
    small = np.abs(dl) < 1e-12
    safe = np.where(small, 1.0, decay)
    return np.where(small, lag, -np.expm1(-dl) / safe)


def lfm_solve(params: LfmParams, forces, grid: TimeGrid, rule: QuadratureRule, x0) -> np.ndarray:
    """State at every grid node, returned as a ``(n_nodes, K)`` array."""
    g = np.asarray(forces, dtype=float)
    if g.ndim == 1:
        g = g[None, :]
    K, R = params.sensitivity.shape
    x0 = np.asarray(x0, dtype=float).reshape(-1)
    if g.shape != (R, grid.n_nodes) or x0.size != K:
        raise ValueError("forces or x0 have the wrong shape")
    t = grid.nodes
    lag = t - t[0]
    d = params.decay
    homogeneous = np.exp(-np.outer(lag, d)) * x0
    drift = _phi1(d[None, :], lag[:, None]) * params.offset
    driven = params.sensitivity @ g                          # (K, n)
    # damping[p, q, k] = exp(-d_k (t_p - t_q)), only used where q <= p
    gap = np.clip(t[:, None] - t[None, :], 0.0, None)
    damping = np.exp(-gap[:, :, None] * d[None, None, :])
    forced = np.einsum("pq,pqk,kq->pk", rule.weights, damping, driven)
    return homogeneous + drift + forced
