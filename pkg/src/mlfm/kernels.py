"""RBF kernel and the exact covariances of a GP with its definite integrals."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import erf, erfc

from .gaussian import GaussianDist, symmetrize

SQRT_HALF_PI = np.sqrt(0.5 * np.pi)


@dataclass(frozen=True)
class RbfKernel:
    """``k(s, t) = variance * exp(-(s - t)**2 / (2 * lengthscale**2))``."""

    variance: float = 1.0
    lengthscale: float = 1.0

    def __post_init__(self):
        if not (self.variance > 0 and self.lengthscale > 0):
            raise ValueError("RBF variance and lengthscale must be positive")


def kernel_eval(k: RbfKernel, s, t):
    s = np.asarray(s, dtype=float)
    t = np.asarray(t, dtype=float)
    return k.variance * np.exp(-0.5 * ((s - t) / k.lengthscale) ** 2)


def gram(k: RbfKernel, times) -> np.ndarray:
    times = np.asarray(times, dtype=float).reshape(-1)
    return kernel_eval(k, times[:, None], times[None, :])


def _erf_diff(x, y):
    """erf(x) - erf(y) without cancellation in the tails."""
    x, y = np.broadcast_arrays(np.asarray(x, float), np.asarray(y, float))
    out = erf(x) - erf(y)
    pos = (x > 0) & (y > 0)
    neg = (x < 0) & (y < 0)
    out = np.where(pos, erfc(y) - erfc(x), out)
    out = np.where(neg, erfc(-x) - erfc(-y), out)
    return out


def kernel_integral(k: RbfKernel, s, a, b):
    """Cov(g(s), ∫_a^b g) for a zero-mean GP with RBF kernel ``k``."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if np.any(a > b):
        raise ValueError("kernel_integral requires a <= b")
    ell = k.lengthscale
    scale = np.sqrt(2.0) * ell
    s = np.asarray(s, dtype=float)
    return k.variance * ell * SQRT_HALF_PI * _erf_diff((b - s) / scale, (a - s) / scale)


def _second_antiderivative_tail(u, ell):
    # h(u) = ell*sqrt(pi/2)*u*erf(u/(sqrt2 ell)) + ell^2 exp(-u^2/(2 ell^2)) has h'' = exp(..).
    # Split h = ell*sqrt(pi/2)*|u| + tail so the large linear part can cancel exactly.
    au = np.abs(u)
    return (-ell * SQRT_HALF_PI * au * erfc(au / (np.sqrt(2.0) * ell))
            + ell ** 2 * np.exp(-0.5 * (u / ell) ** 2))


def kernel_double_integral(k: RbfKernel, a, b, c, d):
    """Cov(∫_a^b g, ∫_c^d g): the RBF kernel integrated over ``[a,b] x [c,d]``."""
    a, b, c, d = (np.asarray(v, dtype=float) for v in (a, b, c, d))
    if np.any(a > b) or np.any(c > d):
        raise ValueError("kernel_double_integral requires a <= b and c <= d")
    ell = k.lengthscale
    linear = (np.abs(b - c) - np.abs(a - c)) - (np.abs(b - d) - np.abs(a - d))
    tail = ((_second_antiderivative_tail(b - c, ell) - _second_antiderivative_tail(a - c, ell))
            - (_second_antiderivative_tail(b - d, ell) - _second_antiderivative_tail(a - d, ell)))
    return k.variance * (ell * SQRT_HALF_PI * linear + tail)


def joint_force_integral_dist(k: RbfKernel, nodes, intervals) -> GaussianDist:
    """Zero-mean joint Gaussian of ``(g(nodes), G_1, ..., G_N)``.

    ``G_i`` is the integral of ``g`` over ``intervals[i]``.
    """
    nodes = np.asarray(nodes, dtype=float).reshape(-1)
    iv = np.asarray(intervals, dtype=float).reshape(-1, 2)
    lo, hi = iv[:, 0], iv[:, 1]
    k_gg = gram(k, nodes)
    if iv.shape[0] == 0:
        return GaussianDist(np.zeros(nodes.size), k_gg)
    k_gi = kernel_integral(k, nodes[:, None], lo[None, :], hi[None, :])
    k_ii = kernel_double_integral(k, lo[:, None], hi[:, None], lo[None, :], hi[None, :])
    cov = np.block([[k_gg, k_gi], [k_gi.T, symmetrize(k_ii)]])
    return GaussianDist(np.zeros(cov.shape[0]), cov)
