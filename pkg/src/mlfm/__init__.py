"""Multiplicative latent force models fitted by successive approximations."""

from .core import (
    MlfmModel,
    PicardConfig,
    StructureBasis,
    loglik_gradient,
    marginal_loglik,
    picard_iterate,
    picard_operator,
    sa_covariance,
)
from .gaussian import GaussianDist, condition, log_density, sample, wasserstein2
from .harness import ExperimentConfig, run_experiment, run_replication
from .inference import FitConfig, LaplaceResult, laplace_approx, marginal_at_obs, optimize_hyper
from .kernels import RbfKernel, joint_force_integral_dist, kernel_double_integral, kernel_integral
from .kubo import extract_angles, ground_truth_conditional, kubo_structure_basis, simulate_exact
from .lfm import LfmParams, lfm_solve
from .quadrature import build_grid, build_rule

__all__ = [
    "ExperimentConfig", "FitConfig", "GaussianDist", "LaplaceResult", "LfmParams", "MlfmModel",
    "PicardConfig", "RbfKernel", "StructureBasis", "build_grid", "build_rule", "condition",
    "extract_angles", "ground_truth_conditional", "joint_force_integral_dist",
    "kernel_double_integral", "kernel_integral", "kubo_structure_basis", "laplace_approx",
    "lfm_solve", "log_density", "loglik_gradient", "marginal_at_obs", "marginal_loglik",
    "optimize_hyper", "picard_iterate", "picard_operator", "run_experiment", "run_replication",
    "sa_covariance", "sample", "simulate_exact", "wasserstein2",
]
