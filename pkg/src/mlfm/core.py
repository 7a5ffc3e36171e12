"""Multiplicative latent force model under truncated successive approximations.

The ODE ``dx/dt = A(t) x`` with ``A(t) = A_0 + sum_r A_r g_r(t)`` is replaced
by ``M`` discrete Picard steps ``x_m = K[g] x_{m-1} + noise(Γ)`` started from
a zero-mean Gaussian ``x_0 ~ N(0, Σ_0)``. The trajectory marginal is then
``N(0, Σ_M(g))`` with ``Σ_m = K Σ_{m-1} Kᵀ + Γ``.

States are stored component-major: entry ``k * n_nodes + p`` is component
``k`` at node ``p``.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np
from scipy import linalg

from .gaussian import LOG_2PI, gaussian_logpdf, jittered_cholesky, symmetrize
from .kernels import RbfKernel, gram
from .quadrature import QuadratureRule, TimeGrid, build_rule

DEFAULT_GAMMA_SCALE = 1e-4


@dataclass(frozen=True)
class StructureBasis:
    """Matrices ``A_0, A_1, ..., A_R`` stacked into an ``(R + 1, K, K)`` array."""

    matrices: np.ndarray

    def __post_init__(self):
        mats = np.array(self.matrices, dtype=float)
        if mats.ndim != 3 or mats.shape[1] != mats.shape[2]:
            raise ValueError("structure matrices must be a stack of square matrices")
        if mats.shape[0] < 2:
            raise ValueError("need A_0 and at least one force matrix")
        mats.flags.writeable = False
        object.__setattr__(self, "matrices", mats)

    @property
    def K(self) -> int:
        return self.matrices.shape[1]

    @property
    def R(self) -> int:
        return self.matrices.shape[0] - 1

    @property
    def offset(self) -> np.ndarray:
        return self.matrices[0]

    @property
    def forces(self) -> np.ndarray:
        return self.matrices[1:]


@dataclass(frozen=True)
class PicardConfig:
    """Truncation order, additive regulariser scale and initial-path kernels.

    ``sigma0_params`` has one ``(variance, lengthscale)`` row per state
    component.
    """

    order: int
    gamma_scale: float = DEFAULT_GAMMA_SCALE
    sigma0_params: np.ndarray = field(default_factory=lambda: np.ones((2, 2)))

    def __post_init__(self):
        phi = np.array(self.sigma0_params, dtype=float).reshape(-1, 2)
        if self.order < 1:
            raise ValueError("order must be >= 1")
        if self.gamma_scale < 0:
            raise ValueError("gamma_scale must be >= 0")
        if np.any(phi <= 0):
            raise ValueError("sigma0 kernel parameters must be positive")
        phi.flags.writeable = False
        object.__setattr__(self, "sigma0_params", phi)

    def with_sigma0(self, params) -> PicardConfig:
        return replace(self, sigma0_params=params)


def coefficient_at(basis: StructureBasis, g_col) -> np.ndarray:
    """``A_0 + sum_r A_r g_r`` for a single vector of force values."""
    g_col = np.asarray(g_col, dtype=float).reshape(-1)
    if g_col.size != basis.R:
        raise ValueError(f"expected {basis.R} force values, got {g_col.size}")
    return basis.offset + np.tensordot(g_col, basis.forces, axes=1)


def _check_forces(basis, grid, g):
    g = np.asarray(g, dtype=float)
    if g.ndim == 1 and basis.R == 1:
        g = g[None, :]
    if g.shape != (basis.R, grid.n_nodes):
        raise ValueError(f"forces have shape {g.shape}, expected {(basis.R, grid.n_nodes)}")
    return g


def picard_operator(basis: StructureBasis, grid: TimeGrid, rule: QuadratureRule, g) -> np.ndarray:
    """Dense matrix of one discrete Picard step over all nodes and components.

    Block row ``p`` copies the node-0 state and adds
    ``sum_q w[p, q] A(g[:, q]) x[:, q]``.
    """
    g = _check_forces(basis, grid, g)
    K, n = basis.K, grid.n_nodes
    coef = basis.offset[None] + np.einsum("rq,rkl->qkl", g, basis.forces)
    op = np.einsum("pq,qkl->kplq", rule.weights, coef)
    op[np.arange(K), :, np.arange(K), 0] += 1.0
    return op.reshape(K * n, K * n)


def picard_iterate(op, x) -> np.ndarray:
    return op @ np.asarray(x, dtype=float)


def build_sigma0(config: PicardConfig, grid: TimeGrid) -> np.ndarray:
    """Block-diagonal initial covariance, one RBF Gram block per component."""
    blocks = [gram(RbfKernel(*phi), grid.nodes) for phi in config.sigma0_params]
    return linalg.block_diag(*blocks)


def sa_covariance(op, config: PicardConfig, sigma0, order: int | None = None) -> np.ndarray:
    """Σ_M from the recursion ``Σ_m = K Σ_{m-1} Kᵀ + Γ``.

    ``order`` overrides ``config.order``; ``order=0`` returns ``sigma0``.
    """
    return _sigma_chain(op, sigma0, config.gamma_scale, config.order if order is None else order)[-1]


def _sigma_chain(op, sigma0, gamma_scale, order):
    sigmas = [np.asarray(sigma0, dtype=float)]
    diag = np.diag_indices(op.shape[0])
    for _ in range(order):
        s = op @ sigmas[-1] @ op.T
        s = symmetrize(s)
        s[diag] += gamma_scale
        sigmas.append(s)
    return sigmas


@dataclass(frozen=True)
class MlfmModel:
    """Everything needed to evaluate the order-M likelihood on one grid."""

    basis: StructureBasis
    grid: TimeGrid
    rule: QuadratureRule
    config: PicardConfig

    @classmethod
    def build(cls, basis, grid, config) -> MlfmModel:
        return cls(basis, grid, build_rule(grid), config)

    def with_config(self, config: PicardConfig) -> MlfmModel:
        return replace(self, config=config)

    @property
    def n_nodes(self) -> int:
        return self.grid.n_nodes

    @property
    def state_dim(self) -> int:
        return self.basis.K * self.grid.n_nodes

    def state_index(self, observed: bool) -> np.ndarray:
        """Indices into the full state vector, all nodes or observation nodes only."""
        nodes = self.grid.obs_index if observed else np.arange(self.n_nodes)
        return (np.arange(self.basis.K)[:, None] * self.n_nodes + nodes[None, :]).reshape(-1)


def _resolve_index(model, x, observed):
    if observed is None:
        observed = x.size != model.state_dim
    idx = model.state_index(observed)
    if x.size != idx.size:
        raise ValueError(f"state vector has length {x.size}, expected {idx.size}")
    return idx


def marginal_loglik(x, g, model: MlfmModel, observed: bool | None = None) -> float:
    """log N(x | 0, Σ_M(g)).

    ``x`` is either the state at every node or, for the usual missing-data
    setting, at the observation nodes only; the marginal then uses the
    matching sub-block of Σ_M. ``observed=None`` infers which from the length.
    """
    x = np.asarray(x, dtype=float).reshape(-1)
    idx = _resolve_index(model, x, observed)
    op = picard_operator(model.basis, model.grid, model.rule, g)
    sigma = sa_covariance(op, model.config, build_sigma0(model.config, model.grid))
    return float(gaussian_logpdf(x, np.zeros(x.size), sigma[np.ix_(idx, idx)]))


def contract_operator_gradient(dop, basis: StructureBasis, rule: QuadratureRule) -> np.ndarray:
    """Map a gradient with respect to the dense operator onto the forces.

    The operator is affine in ``g`` with ``∂op[k p, l q] / ∂g[r, q] = w[p, q] A_r[k, l]``.
    """
    K = basis.K
    n = rule.weights.shape[0]
    d4 = dop.reshape(K, n, K, n)
    per_node = np.einsum("kplq,pq->klq", d4, rule.weights)
    return np.einsum("rkl,klq->rq", basis.forces, per_node)


def _backpropagate(op, sigmas, b_top):
    """Reverse pass through the Σ recursion.

    Given ``B = ∂f/∂Σ_M`` (symmetric), returns ``∂f/∂op`` and ``∂f/∂Σ_0``.
    """
    d_op = np.zeros_like(op)
    b = b_top
    for s_prev in reversed(sigmas[:-1]):
        d_op += 2.0 * (b @ op @ s_prev)
        b = symmetrize(op.T @ b @ op)
    return d_op, b


def loglik_value_and_grad(x, g, model: MlfmModel, observed: bool | None = None,
                          sigma0_grad: bool = False):
    """Log-likelihood and its exact gradient in the forces.

    Returns ``(value, grad)`` with ``grad`` of shape ``(R, n_nodes)``; with
    ``sigma0_grad=True`` also returns ``∂value/∂Σ_0`` as a third item.
    """
    x = np.asarray(x, dtype=float).reshape(-1)
    idx = _resolve_index(model, x, observed)
    op = picard_operator(model.basis, model.grid, model.rule, g)
    sigmas = _sigma_chain(op, build_sigma0(model.config, model.grid),
                          model.config.gamma_scale, model.config.order)
    sub = sigmas[-1][np.ix_(idx, idx)]
    chol, _ = jittered_cholesky(sub)
    alpha = linalg.cho_solve((chol, True), x)
    value = -0.5 * (x @ alpha + 2.0 * np.sum(np.log(np.diag(chol))) + x.size * LOG_2PI)

    inv = linalg.cho_solve((chol, True), np.eye(x.size))
    b_top = np.zeros_like(sigmas[-1])
    b_top[np.ix_(idx, idx)] = 0.5 * symmetrize(np.outer(alpha, alpha) - inv)
    d_op, b0 = _backpropagate(op, sigmas, b_top)
    grad = contract_operator_gradient(d_op, model.basis, model.rule)
    if sigma0_grad:
        return float(value), grad, b0
    return float(value), grad


def loglik_gradient(x, g, model: MlfmModel, observed: bool | None = None) -> np.ndarray:
    return loglik_value_and_grad(x, g, model, observed)[1]


def sigma0_log_param_gradient(b0, config: PicardConfig, grid: TimeGrid) -> np.ndarray:
    """Chain ``∂f/∂Σ_0`` through to the log kernel parameters of each component.

    Returns an array shaped like ``config.sigma0_params``.
    """
    n = grid.n_nodes
    lag2 = (grid.nodes[:, None] - grid.nodes[None, :]) ** 2
    out = np.empty_like(config.sigma0_params)
    for k, (var, ell) in enumerate(config.sigma0_params):
        block = b0[k * n:(k + 1) * n, k * n:(k + 1) * n]
        kmat = gram(RbfKernel(var, ell), grid.nodes)
        out[k, 0] = np.sum(block * kmat)
        out[k, 1] = np.sum(block * kmat * lag2) / ell ** 2
    return out
