"""Multivariate Gaussian primitives.

Density, sampling, conditioning, PSD square roots and the Wasserstein-2
distance between Gaussians. Everything here is small and dense; dimensions
stay below a hundred or so.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import linalg

JITTER_START = 1e-10
JITTER_ESCALATIONS = 3
SYMMETRY_RTOL = 1e-12
NEG_EIG_RTOL = 1e-10
SQRT_CLIP_RTOL = 1e-12

LOG_2PI = np.log(2.0 * np.pi)


class IndefiniteCovarianceError(np.linalg.LinAlgError):
    """Raised when a covariance cannot be factorised even after jitter."""


@dataclass(frozen=True)
class GaussianDist:
    """Mean vector plus symmetric PSD covariance.

    Arrays are copied and marked read-only on construction.
    """

    mean: np.ndarray
    cov: np.ndarray

    def __post_init__(self):
        mean = np.array(self.mean, dtype=float).reshape(-1)
        cov = np.array(self.cov, dtype=float)
        if cov.ndim == 0:
            cov = cov.reshape(1, 1)
        d = mean.size
        if cov.shape != (d, d):
            raise ValueError(f"cov has shape {cov.shape}, expected {(d, d)}")
        _check_psd(cov)
        mean.flags.writeable = False
        cov.flags.writeable = False
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "cov", cov)

    @property
    def dim(self) -> int:
        return self.mean.size

    def marginal(self, indices) -> GaussianDist:
        idx = np.asarray(indices, dtype=int)
        return GaussianDist(self.mean[idx], self.cov[np.ix_(idx, idx)])

    def to_json(self) -> dict:
        return {"mean": self.mean.tolist(), "cov": self.cov.tolist()}

    @classmethod
    def from_json(cls, obj: dict) -> GaussianDist:
        return cls(np.asarray(obj["mean"], float), np.asarray(obj["cov"], float))


def _check_psd(cov):
    if cov.size == 0:
        return
    scale = np.max(np.abs(cov))
    if not np.all(np.isfinite(cov)):
        raise ValueError("covariance contains non-finite entries")
    if np.max(np.abs(cov - cov.T)) > SYMMETRY_RTOL * max(scale, 1e-300):
        raise ValueError("covariance is not symmetric")
    eig = np.linalg.eigvalsh(cov)
    if eig[0] < -NEG_EIG_RTOL * max(eig[-1], 0.0):
        raise ValueError(
            f"covariance is not PSD (min eigenvalue {eig[0]:.3e}, max {eig[-1]:.3e})"
        )


def symmetrize(a):
    return 0.5 * (a + a.T)


def jittered_cholesky(cov):
    """Lower Cholesky factor of ``cov`` with escalating diagonal jitter.

    Adds ``eps * trace(cov) / d`` to the diagonal, starting at
    ``eps = 1e-10`` and growing tenfold up to three times.

    Returns
    -------
    chol : ndarray
        Lower-triangular factor.
    eps : float
        The jitter multiplier that succeeded.
    """
    cov = np.asarray(cov, dtype=float)
    d = cov.shape[0]
    base = np.trace(cov) / d if d else 0.0
    eye = np.eye(d)
    eps = JITTER_START
    for _ in range(JITTER_ESCALATIONS + 1):
        try:
            return linalg.cholesky(cov + eps * base * eye, lower=True), eps
        except linalg.LinAlgError:
            eps *= 10.0
    raise IndefiniteCovarianceError(
        f"cholesky failed after jitter up to {eps / 10.0:.0e} * trace/d"
    )


def psd_sqrt(cov):
    """Symmetric square root via eigendecomposition, small eigenvalues clipped."""
    eig, vec = np.linalg.eigh(symmetrize(np.asarray(cov, dtype=float)))
    top = eig[-1] if eig.size else 0.0
    eig = np.where(eig < top * SQRT_CLIP_RTOL, 0.0, eig)
    return (vec * np.sqrt(eig)) @ vec.T


def gaussian_logpdf(x, mean, cov):
    """log N(x | mean, cov) from a jittered Cholesky factor."""
    x = np.asarray(x, dtype=float).reshape(-1)
    mean = np.asarray(mean, dtype=float).reshape(-1)
    if x.size != mean.size or np.shape(cov) != (x.size, x.size):
        raise ValueError("dimension mismatch between x, mean and cov")
    chol, _ = jittered_cholesky(cov)
    z = linalg.solve_triangular(chol, x - mean, lower=True)
    logdet = 2.0 * np.sum(np.log(np.diag(chol)))
    return -0.5 * (z @ z + logdet + x.size * LOG_2PI)


def log_density(x, dist: GaussianDist) -> float:
    """Log-density of ``x`` under ``dist``."""
    return float(gaussian_logpdf(x, dist.mean, dist.cov))


def sample(dist: GaussianDist, rng: np.random.Generator, n: int = 1) -> np.ndarray:
    """Draw ``n`` samples, returned as rows of an ``(n, d)`` array.

    Uses the clipped symmetric square root, so a zero covariance gives draws
    equal to the mean exactly.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    root = psd_sqrt(dist.cov)
    z = rng.standard_normal((n, dist.dim))
    return dist.mean + z @ root


def condition(joint: GaussianDist, observed_indices, observed_values) -> GaussianDist:
    """Conditional of the unobserved coordinates given the observed ones.

    The returned distribution lives on the complement of
    ``observed_indices`` in increasing index order.
    """
    obs = np.asarray(observed_indices, dtype=int).reshape(-1)
    vals = np.asarray(observed_values, dtype=float).reshape(-1)
    if obs.size != vals.size:
        raise ValueError("observed_indices and observed_values differ in length")
    if obs.size == 0:
        return joint
    if np.unique(obs).size != obs.size:
        raise ValueError("observed indices must be distinct")
    if obs.min() < 0 or obs.max() >= joint.dim:
        raise IndexError("observed index out of range")
    free = np.setdiff1d(np.arange(joint.dim), obs)

    c_oo = joint.cov[np.ix_(obs, obs)]
    c_fo = joint.cov[np.ix_(free, obs)]
    c_ff = joint.cov[np.ix_(free, free)]
    chol, _ = jittered_cholesky(c_oo)
    gain = linalg.cho_solve((chol, True), c_fo.T).T
    mean = joint.mean[free] + gain @ (vals - joint.mean[obs])
    cov = symmetrize(c_ff - gain @ c_fo.T)
    # roundoff can leave tiny negative eigenvalues on strongly informed coordinates
    eig, vec = np.linalg.eigh(cov)
    if eig.size and eig[0] < 0.0:
        cov = symmetrize((vec * np.maximum(eig, 0.0)) @ vec.T)
    return GaussianDist(mean, cov)


def wasserstein2(d1: GaussianDist, d2: GaussianDist) -> float:
    """Wasserstein-2 distance between two Gaussians.

    The covariance term ``tr(C1 + C2 - 2 (C2^½ C1 C2^½)^½)`` is evaluated as
    ``min_U ||C1^½ - C2^½ U||_F²`` over orthogonal ``U``, solved by the polar
    factor of ``C2^½ C1^½``. The two are equal, but the second form has no
    cancellation when the distributions are close.
    """
    if d1.dim != d2.dim:
        raise ValueError(f"dimension mismatch: {d1.dim} vs {d2.dim}")
    s1 = psd_sqrt(d1.cov)
    s2 = psd_sqrt(d2.cov)
    left, _, right = np.linalg.svd(s2.T @ s1)
    rot = left @ right
    bures = np.sum((s1 - s2 @ rot) ** 2)
    w2 = np.sum((d1.mean - d2.mean) ** 2) + bures
    return float(np.sqrt(max(w2, 0.0)))


def wasserstein2_direct(d1: GaussianDist, d2: GaussianDist) -> float:
    """Textbook trace formula for W2, kept as an independent cross-check."""
    if d1.dim != d2.dim:
        raise ValueError(f"dimension mismatch: {d1.dim} vs {d2.dim}")
    s2 = psd_sqrt(d2.cov)
    cross = psd_sqrt(s2 @ d1.cov @ s2)
    w2 = np.sum((d1.mean - d2.mean) ** 2) + np.trace(d1.cov + d2.cov - 2.0 * cross)
    return float(np.sqrt(max(w2, 0.0)))
