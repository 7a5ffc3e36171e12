"""Kubo oscillator: a rotation in the plane driven by a GP angular velocity.

``dx/dt = g(t) J x`` with ``J = [[0, -1], [1, 0]]`` is solved exactly by
rotating ``x(t_0)`` through ``∫ g``. This gives a ground truth against which
the successive-approximation posterior can be scored.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import StructureBasis
from .gaussian import GaussianDist, condition, sample
from .kernels import RbfKernel, joint_force_integral_dist
from .quadrature import TimeGrid

GENERATOR = np.array([[0.0, -1.0], [1.0, 0.0]])


def rotation(theta) -> np.ndarray:
    """Anticlockwise rotation by ``theta`` radians."""
    c, s = np.cos(theta), np.sin(theta)
    return np.array([[c, -s], [s, c]])


def kubo_structure_basis() -> StructureBasis:
    return StructureBasis(np.stack([np.zeros((2, 2)), GENERATOR]))


@dataclass(frozen=True)
class KuboTrajectory:
    """Exact Kubo path.

    ``times``/``states`` hold the observations. ``true_g`` is the force at
    every grid node and ``true_G`` the integral over each observation
    interval. ``node_states`` is the exact state at every grid node.
    """

    times: np.ndarray
    states: np.ndarray
    true_g: np.ndarray | None = None
    true_G: np.ndarray | None = None
    node_times: np.ndarray | None = None
    node_states: np.ndarray | None = None

    @property
    def wrapped(self) -> bool:
        """True if any interval turned through at least half a revolution."""
        return self.true_G is not None and bool(np.any(np.abs(self.true_G) >= np.pi))

    def state_vector(self) -> np.ndarray:
        """Observed states flattened component-major."""
        return np.asarray(self.states).T.reshape(-1)


def states_from_angles(x0, angles) -> np.ndarray:
    """Apply cumulative rotations: row ``i`` is ``R(angles[0] + ... + angles[i-1]) x0``."""
    x0 = np.asarray(x0, dtype=float)
    cum = np.concatenate([[0.0], np.cumsum(angles)])
    c, s = np.cos(cum), np.sin(cum)
    return np.column_stack([c * x0[0] - s * x0[1], s * x0[0] + c * x0[1]])


def simulate_exact(k: RbfKernel, grid: TimeGrid, x0, rng: np.random.Generator) -> KuboTrajectory:
    """Draw the force at the nodes jointly with its integrals, then rotate.

    Integrals are drawn over every node-to-node step, so the state is exact
    at every node and there is no path discretisation error anywhere.
    """
    x0 = np.asarray(x0, dtype=float)
    if np.linalg.norm(x0) == 0:
        raise ValueError("initial state must be nonzero")
    n = grid.n_nodes
    joint = joint_force_integral_dist(k, grid.nodes, grid.node_intervals)
    draw = sample(joint, rng, 1)[0]
    g = draw[:n]
    steps = draw[n:]
    node_states = states_from_angles(x0, steps)
    per_obs = (n - 1) // grid.n_intervals
    big = steps.reshape(grid.n_intervals, per_obs).sum(axis=1)
    obs = grid.obs_index
    return KuboTrajectory(
        times=grid.obs_times.copy(),
        states=node_states[obs],
        true_g=g,
        true_G=big,
        node_times=grid.nodes.copy(),
        node_states=node_states,
    )


def extract_angles(traj: KuboTrajectory) -> np.ndarray:
    """Signed turning angle of each interval, in ``(-π, π]``."""
    x = np.asarray(traj.states, dtype=float)
    if np.any(np.linalg.norm(x, axis=1) == 0):
        raise ValueError("zero-norm state; angle undefined")
    prev, cur = x[:-1], x[1:]
    cross = prev[:, 0] * cur[:, 1] - prev[:, 1] * cur[:, 0]
    dot = np.sum(prev * cur, axis=1)
    return np.arctan2(cross, dot)


def ground_truth_conditional(k: RbfKernel, grid: TimeGrid, gamma) -> GaussianDist:
    """Gaussian law of ``g`` at the observation times given the interval integrals."""
    gamma = np.asarray(gamma, dtype=float).reshape(-1)
    if gamma.size != grid.n_intervals:
        raise ValueError(f"expected {grid.n_intervals} angles, got {gamma.size}")
    n_obs = grid.obs_times.size
    joint = joint_force_integral_dist(k, grid.obs_times, grid.intervals)
    return condition(joint, np.arange(n_obs, n_obs + gamma.size), gamma)
