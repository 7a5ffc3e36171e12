"""Augmented node grid and cumulative Simpson weights.

Each observation interval ``[t_{i-1}, t_i]`` is split into ``2 * panels``
equal sub-steps. With the default ``panels=1`` this inserts the interval
midpoint, so ``N + 1`` observation times become ``2N + 1`` nodes.

Row ``p`` of the weight matrix approximates ``∫_{t_0}^{nodes[p]} f``.
Nodes that close a Simpson panel get the cumulative composite Simpson rule.
A node halfway through a panel gets the cumulative rule up to the panel
start plus a trapezoid over the half panel.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class TimeGrid:
    obs_times: np.ndarray
    nodes: np.ndarray
    interval_of_node: np.ndarray
    is_observation: np.ndarray

    @property
    def n_nodes(self) -> int:
        return self.nodes.size

    @property
    def n_intervals(self) -> int:
        return self.obs_times.size - 1

    @property
    def obs_index(self) -> np.ndarray:
        """Positions of the observation times within ``nodes``."""
        return np.flatnonzero(self.is_observation)

    @property
    def intervals(self) -> np.ndarray:
        return np.column_stack([self.obs_times[:-1], self.obs_times[1:]])

    @property
    def node_intervals(self) -> np.ndarray:
        """Consecutive node pairs, the finest intervals the grid resolves."""
        return np.column_stack([self.nodes[:-1], self.nodes[1:]])


@dataclass(frozen=True)
class QuadratureRule:
    """Dense lower-triangular weights; ``weights[p, q]`` multiplies ``f(nodes[q])``."""

    weights: np.ndarray

    def row(self, p: int) -> np.ndarray:
        return self.weights[p, : p + 1]

    def integrate(self, values) -> np.ndarray:
        """Cumulative integrals from the first node to every node."""
        return self.weights @ np.asarray(values, dtype=float)


def build_grid(obs_times, panels: int = 1) -> TimeGrid:
    """Insert ``2 * panels - 1`` equally spaced nodes inside every interval."""
    obs = np.asarray(obs_times, dtype=float).reshape(-1)
    if obs.size < 2:
        raise ValueError("need at least two observation times")
    if not np.all(np.diff(obs) > 0):
        raise ValueError("observation times must be strictly increasing")
    if panels < 1:
        raise ValueError("panels must be >= 1")
    steps = 2 * panels
    frac = np.arange(steps) / steps
    inner = obs[:-1, None] + frac[None, :] * np.diff(obs)[:, None]
    nodes = np.append(inner.reshape(-1), obs[-1])
    # keep observation times bit-exact
    nodes[::steps] = obs

    n = nodes.size
    interval_of_node = np.empty(n, dtype=int)
    interval_of_node[0] = 0
    interval_of_node[1:] = np.arange(1, n) // steps + ((np.arange(1, n) % steps) != 0)
    is_obs = np.zeros(n, dtype=bool)
    is_obs[::steps] = True
    for arr in (obs, nodes, interval_of_node, is_obs):
        arr.flags.writeable = False
    return TimeGrid(obs, nodes, interval_of_node, is_obs)


def build_rule(grid: TimeGrid) -> QuadratureRule:
    nodes = grid.nodes
    n = nodes.size
    w = np.zeros((n, n))
    # cumulative weights at the most recent panel boundary
    acc = np.zeros(n)
    p = 0
    while p + 2 < n:
        h = nodes[p + 2] - nodes[p]
        half = nodes[p + 1] - nodes[p]
        w[p + 1] = acc
        w[p + 1, p] += 0.5 * half
        w[p + 1, p + 1] += 0.5 * half
        acc = acc.copy()
        acc[p] += h / 6.0
        acc[p + 1] += 4.0 * h / 6.0
        acc[p + 2] += h / 6.0
        w[p + 2] = acc
        p += 2
    w.flags.writeable = False
    return QuadratureRule(w)
