import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.integrate import solve_ivp

from netfdi.dynamics import linear_controller, linear_leak, tanh_controller, vehicle_drag
from netfdi.errors import SynthesisError
from netfdi.graph_core import (Graph, circulant_graph, complete_graph, cycle_graph, enumerate_subgraphs,
                               incidence_matrix, path_graph)
from netfdi.indication import sample_kernel
from netfdi.steady_state import (NetworkSystem, min_pairwise_distance, solve_steady_state,
                                 solve_steady_state_batch, steady_state_table, synthesize_controllers)

from conftest import random_connected_graph

TRIANGLE = Graph(3, ((0, 1), (1, 2), (0, 2)))


def linear_net(g, a=None, gains=None, w=None, v=None):
    a = np.ones(g.n) if a is None else a
    gains = np.ones(g.m) if gains is None else gains
    return NetworkSystem(g, [linear_leak(x) for x in a], [linear_controller(k) for k in gains], w, v)


def linear_oracle(g, a, gains, w, v, mask):
    """Closed form of (diag(a) + E D E^T) y = v - E D w with D = diag(mask * gains)."""
    E = incidence_matrix(g).astype(float)
    D = np.diag(mask * gains)
    return np.linalg.solve(np.diag(a) + E @ D @ E.T, v - E @ (mask * w))


def test_linear_zero():
    assert np.allclose(solve_steady_state(linear_net(TRIANGLE)).y, 0.0, atol=1e-14)


def test_linear_bias_closed_form():
    w = np.array([0.3, -1.2, 0.8])
    E = incidence_matrix(TRIANGLE).astype(float)
    expect = -np.linalg.solve(np.eye(3) + E @ E.T, E @ w)
    assert np.allclose(solve_steady_state(linear_net(TRIANGLE, w=w)).y, expect, atol=1e-12)


def test_kernel_bias_leaves_output_unchanged():
    w = sample_kernel(TRIANGLE, 4).w
    y0 = solve_steady_state(linear_net(TRIANGLE)).y
    assert np.max(np.abs(solve_steady_state(linear_net(TRIANGLE, w=w)).y - y0)) <= 1e-9


@pytest.mark.parametrize("seed", range(50))
def test_newton_matches_linear_solve(seed):
    rng = np.random.default_rng(seed)
    g = random_connected_graph(rng, 2, 10, p=0.4)
    a, gains = rng.uniform(0.2, 3, g.n), rng.uniform(0.2, 3, g.m)
    w, v = rng.normal(size=g.m), rng.normal(size=g.n)
    mask = (rng.random(g.m) < 0.7).astype(float)
    mask[0] = 1.0
    Y, _, _, conv = solve_steady_state_batch(linear_net(g, a, gains, w, v), mask[None, :])
    assert conv[0]
    assert np.allclose(Y[0], linear_oracle(g, a, gains, w, v, mask), atol=1e-9)


@pytest.mark.parametrize("seed", range(10))
def test_jacobian_symmetric_part_positive(seed):
    rng = np.random.default_rng(100 + seed)
    g = random_connected_graph(rng, 3, 8)
    agents = [vehicle_drag(c) for c in rng.uniform(0.01, 0.1, g.n)]
    net = synthesize_controllers(agents, g, [tanh_controller()] * g.m, rng.uniform(20, 80, g.n))
    net = net.with_bias(rng.normal(size=g.m))
    y = solve_steady_state(net).y
    E = net.E
    J = np.diag(net.astack.dk_inv(y)) + E @ np.diag(net.cstack.dg(y @ E - net.cstack.zeta_star)) @ E.T
    assert np.min(np.linalg.eigvalsh(0.5 * (J + J.T))) > 0
    assert np.max(np.abs(net.residual(y))) < 1e-8


def test_consensus_synthesis_is_trivial():
    g = cycle_graph(4)
    net = synthesize_controllers([linear_leak(1.0)] * 4, g, [tanh_controller()] * 4, np.zeros(4))
    assert np.allclose(net.feedforward, 0.0)
    assert np.allclose([c.mu_star for c in net.controllers], 0.0)
    assert np.allclose([c.zeta_star for c in net.controllers], 0.0)


def test_path_synthesis_by_ode_oracle():
    g = path_graph(3)
    y_star = np.array([1.0, 2.0, 3.0])
    net = synthesize_controllers([linear_leak(1.0)] * 3, g, [linear_controller(1.0)] * 2, y_star)
    E = incidence_matrix(g).astype(float)
    zs = np.array([c.zeta_star for c in net.controllers])
    ms = np.array([c.mu_star for c in net.controllers])
    assert np.allclose(zs, y_star @ E)
    assert np.allclose(net.feedforward, 2.0)
    assert np.allclose(ms, [1.0, 1.0])

    def rhs(t, x):
        return -x + net.feedforward - E @ ((x @ E - zs) + ms)

    sol = solve_ivp(rhs, (0, 60), np.zeros(3), rtol=1e-11, atol=1e-12)
    assert np.allclose(sol.y[:, -1], y_star, atol=1e-8)


def test_vehicle_case_targets():
    rng = np.random.default_rng(0)
    g = circulant_graph(20, (1, 2))
    y_star = np.r_[[60.0] * 7, [70.0] * 6, [50.0] * 7]
    agents = [vehicle_drag(c) for c in np.exp(rng.uniform(np.log(0.01), np.log(0.1), 20))]
    net = synthesize_controllers(agents, g, [tanh_controller()] * g.m, y_star)
    assert np.max(np.abs(solve_steady_state(net).y - y_star)) <= 1e-6


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10_000))
def test_synthesis_roundtrip(seed):
    rng = np.random.default_rng(seed)
    g = random_connected_graph(rng, 3, 7)
    agents = [vehicle_drag(c) if rng.random() < 0.5 else linear_leak(c) for c in rng.uniform(0.05, 2, g.n)]
    ctrl = [tanh_controller() if rng.random() < 0.5 else linear_controller(k) for k in rng.uniform(0.5, 2, g.m)]
    y_star = rng.uniform(-5, 5, g.n)
    net = synthesize_controllers(agents, g, ctrl, y_star)
    assert np.max(np.abs(solve_steady_state(net).y - y_star)) <= 1e-6


def test_table_r0_is_nominal():
    net = synthesize_controllers([vehicle_drag(0.05)] * 4, complete_graph(4), [tanh_controller()] * 6,
                                 np.array([1.0, 2.0, 3.0, 4.0]))
    tab = steady_state_table(net, enumerate_subgraphs(net.graph, 0))
    assert len(tab) == 1 and np.allclose(tab[0], [1, 2, 3, 4], atol=1e-6)


def test_triangle_table_distinct_under_gaussian_bias():
    w = np.random.default_rng(7).normal(size=3)
    net = linear_net(TRIANGLE, w=w)
    subs = enumerate_subgraphs(TRIANGLE, 1)
    tab = steady_state_table(net, subs)
    for k, h in enumerate(subs):
        ref = linear_oracle(TRIANGLE, np.ones(3), np.ones(3), w, np.zeros(3), h.array.astype(float))
        assert np.allclose(tab[k], ref, atol=1e-10)
    assert tab.min_distance > 1e-3


def test_unbiased_table_is_degenerate():
    net = synthesize_controllers([linear_leak(1.0)] * 3, TRIANGLE, [tanh_controller()] * 3, np.zeros(3))
    tab = steady_state_table(net, enumerate_subgraphs(TRIANGLE, 1))
    assert tab.min_distance <= 1e-12


def test_min_pairwise_distance():
    d, pair = min_pairwise_distance(np.array([[0.0, 0.0], [1.0, 5.0], [0.5, 0.1]]))
    assert d == pytest.approx(0.5) and pair == (0, 2)
    assert min_pairwise_distance(np.zeros((1, 3)))[0] == float("inf")


def test_disconnected_subgraph_flagged():
    net = synthesize_controllers([linear_leak(1.0)] * 3, path_graph(3), [linear_controller()] * 2,
                                 np.zeros(3))
    sol = solve_steady_state(net, net.graph.mask_without([0]))
    assert sol.disconnected and sol.converged


def test_unreachable_target_rejected():
    from netfdi.dynamics import custom_poly
    with pytest.raises(SynthesisError):
        synthesize_controllers([custom_poly(h="tanh")] * 3, TRIANGLE, [tanh_controller()] * 3,
                               np.array([0.5, 1.5, 0.0]))
