import numpy as np
import pytest
from hypothesis import given, strategies as st

from mlfm.quadrature import build_grid, build_rule


def test_single_interval_grid():
    g = build_grid([0.0, 1.0])
    assert g.nodes.tolist() == [0.0, 0.5, 1.0]
    assert g.obs_index.tolist() == [0, 2]


def test_two_interval_grid():
    g = build_grid([0.0, 0.5, 1.0])
    assert g.nodes.tolist() == [0.0, 0.25, 0.5, 0.75, 1.0]
    assert g.n_nodes == 2 * 2 + 1


def test_non_uniform_grid():
    assert build_grid([0.0, 1.0, 4.0]).nodes.tolist() == [0.0, 0.5, 1.0, 2.5, 4.0]


def test_grid_rejects_bad_input():
    with pytest.raises(ValueError):
        build_grid([0.0])
    with pytest.raises(ValueError):
        build_grid([0.0, 1.0, 1.0])
    with pytest.raises(ValueError):
        build_grid([0.0, 1.0], panels=0)


def test_interval_bookkeeping():
    g = build_grid([0.0, 1.0, 2.0])
    assert g.interval_of_node.tolist() == [0, 1, 1, 2, 2]
    assert g.intervals.tolist() == [[0.0, 1.0], [1.0, 2.0]]
    assert g.node_intervals.shape == (4, 2)


def test_simpson_and_trapezoid_rows():
    r = build_rule(build_grid([0.0, 1.0]))
    assert np.allclose(r.weights[2], [1 / 6, 4 / 6, 1 / 6], atol=1e-15)
    assert np.array_equal(r.weights[0], np.zeros(3))
    assert np.allclose(r.weights[1], [0.25, 0.25, 0.0], atol=1e-15)
    assert r.row(1).tolist() == [0.25, 0.25]


def test_finer_panels():
    g = build_grid([0.0, 1.0], panels=2)
    assert g.nodes.tolist() == [0.0, 0.25, 0.5, 0.75, 1.0]
    assert g.obs_index.tolist() == [0, 4]
    r = build_rule(g)
    assert r.integrate(g.nodes ** 2)[4] == pytest.approx(1 / 3, abs=1e-15)


obs_strategy = st.lists(st.floats(0.05, 2.0), min_size=1, max_size=8).map(
    lambda w: np.concatenate([[0.0], np.cumsum(w)]))


@given(obs_strategy)
def test_grid_invariants(obs):
    g = build_grid(obs)
    assert np.all(np.diff(g.nodes) > 0)
    assert g.n_nodes == 2 * (obs.size - 1) + 1
    assert np.array_equal(g.nodes[g.obs_index], obs)
    assert g.nodes[0] == obs[0] and g.nodes[-1] == obs[-1]


@given(obs_strategy)
def test_constant_integrand_exact(obs):
    g = build_grid(obs)
    r = build_rule(g)
    assert np.allclose(r.integrate(np.ones(g.n_nodes)), g.nodes - g.nodes[0], rtol=0, atol=1e-13)


@given(obs_strategy)
def test_quadratics_exact_at_observations(obs):
    g = build_grid(obs)
    got = build_rule(g).integrate(g.nodes ** 2)[g.obs_index]
    assert np.allclose(got, obs ** 3 / 3, rtol=0, atol=1e-12 * max(1.0, obs[-1] ** 3))


@given(obs_strategy)
def test_weights_nonnegative_and_lower_triangular(obs):
    w = build_rule(build_grid(obs)).weights
    assert np.all(w >= 0)
    assert np.array_equal(w, np.tril(w))


def test_fourth_order_convergence():
    errs = []
    for dt in (0.5, 0.25, 0.125):
        g = build_grid(np.linspace(0.0, 3.0, int(round(3 / dt)) + 1))
        approx = build_rule(g).integrate(np.sin(g.nodes))
        errs.append(np.max(np.abs(approx - (1 - np.cos(g.nodes)))[g.obs_index]))
    orders = np.log2(np.array(errs[:-1]) / np.array(errs[1:]))
    assert np.all(orders >= 4.0)


def test_midpoint_rows_second_order():
    errs = []
    for dt in (0.5, 0.25, 0.125):
        g = build_grid(np.linspace(0.0, 3.0, int(round(3 / dt)) + 1))
        mid = ~g.is_observation
        approx = build_rule(g).integrate(np.sin(g.nodes))
        errs.append(np.max(np.abs(approx - (1 - np.cos(g.nodes)))[mid]))
    # local trapezoid error on a half step: third order in the step
    assert np.all(np.log2(np.array(errs[:-1]) / np.array(errs[1:])) > 2.5)
