import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from netfdi.assertion import (SLACK, AssertionConfig, Omega, agent_indices, bound_M, build_combined_profiles,
                              combine_profiles, conjectured_limit, controller_indices, dissipation_rhs,
                              energy_bound, high_rate_schedule, high_rate_step, make_bank, ode_schedule_gap,
                              omega_construct, profile_check, profile_schedule_run, profile_schedule_step,
                              run_assertion, sublevel_box, validate_combination)
from netfdi.dynamics import custom_poly, linear_controller, linear_leak, tanh_controller, vehicle_drag
from netfdi.errors import CombinationError, ProfileError, ScenarioError
from netfdi.graph_core import Graph, enumerate_subgraphs
from netfdi.indication import sample_general, validate_indication
from netfdi.simulator import SwitchingSignal, integrate, sample_stream
from netfdi.steady_state import NetworkSystem, synthesize_controllers

from conftest import SMALL_BOUNDS, random_network

TRIANGLE = Graph(3, ((0, 1), (1, 2), (0, 2)))
S_GRID = np.logspace(-12, 4, 400)


def table(fn):
    return Omega(S_GRID, fn(S_GRID), shrink=0.0)


def run(net, y_star, x0, faults, method, span=30.0, mask=None):
    tr = integrate(net, SwitchingSignal(faults), x0, span, 1e-3)
    rate = 10.0 if method == "profile" else 1000.0
    cfg = AssertionConfig(method=method, delta1="auto", n_validate=200_000)
    mask = np.ones(net.m, bool) if mask is None else mask
    return run_assertion(method, sample_stream(tr, rate), net, mask, conjectured_limit(net, y_star, mask), cfg,
                         bounds=SMALL_BOUNDS), tr


def test_dissipation_zero_at_limit():
    net, y, _, _ = random_network(0)
    lim = conjectured_limit(net, y)
    rho = agent_indices(net.agents, lim.xbar, SMALL_BOUNDS)
    assert dissipation_rhs(net, np.ones(net.m, bool), lim, lim.xbar, rho) == 0.0


def test_dissipation_two_linear_agents():
    net = NetworkSystem(Graph(2, ((0, 1),)), [linear_leak(1.0)] * 2, [linear_controller()])
    lim = conjectured_limit(net, np.zeros(2))
    G = dissipation_rhs(net, np.ones(1, bool), lim, np.array([1.0, -1.0]), np.ones(2), nu=np.zeros(1))
    assert G == 2.0


def test_dissipation_term_by_term():
    net, y, x0, e = random_network(3)
    mask = np.ones(net.m, bool)
    mask[e] = False
    lim = conjectured_limit(net, y, mask)
    rho = np.linspace(0.5, 1.5, net.n)
    nu = controller_indices(net)
    G = dissipation_rhs(net, mask, lim, x0, rho)
    ref = 0.0
    for i, a in enumerate(net.agents):
        ref += rho[i] * (float(a.h(x0[i])) - y[i]) ** 2
    yx = [float(a.h(v)) for a, v in zip(net.agents, x0)]
    for k, ((i, j), c) in enumerate(zip(net.graph.edges, net.controllers)):
        if mask[k]:
            ref += nu[k] * (c(yx[i] - yx[j]) - c(y[i] - y[j])) ** 2
    assert G == pytest.approx(ref, rel=1e-12)


def single_linear_agent():
    net = NetworkSystem(Graph(1, ()), [linear_leak(1.0)], [])
    return net, conjectured_limit(net, np.zeros(1), np.ones(0, bool))


def test_bound_M_single_linear_agent():
    net, lim = single_linear_agent()
    lo, hi, _ = sublevel_box(net.agents, lim.xbar, 0.5, (-10, 10))
    assert lo[0, 0] == pytest.approx(-1.0) and hi[0, 0] == pytest.approx(1.0)
    M = bound_M(net, np.ones(0, bool), lim, 0.5, np.ones(1), bounds=(-10, 10))
    assert M == pytest.approx(2.2)
    # |dG/dt| = |2 x (-x)| attains 2 on the box, so the bound is sharp up to the safety factor
    x = np.linspace(-1, 1, 2001)
    assert np.max(np.abs(2 * x * -x)) <= M


def test_bound_M_vanishes_with_level():
    net, lim = single_linear_agent()
    assert bound_M(net, np.ones(0, bool), lim, 1e-14, np.ones(1), bounds=(-10, 10)) < 1e-12


def test_bound_M_decreases_with_level():
    net, y, x0, _ = random_network(5)
    lim = conjectured_limit(net, y)
    rho = agent_indices(net.agents, lim.xbar, SMALL_BOUNDS)
    levels = [4.0, 1.0, 0.25, 0.01]
    Ms = [bound_M(net, np.ones(net.m, bool), lim, L, rho, bounds=SMALL_BOUNDS) for L in levels]
    assert all(np.isfinite(Ms)) and all(a > b for a, b in zip(Ms, Ms[1:]))


def test_high_rate_schedule_formula():
    assert high_rate_schedule(10.0, 1.0, 2.0) == (0.5, 0.5, 20.0)
    dt, _, _ = high_rate_schedule(1.0, 1.0, 0.0)
    assert dt == math.inf


def test_high_rate_stationary_passes():
    ok, lhs, rhs = high_rate_step(0.0, 0.0, 0.0, 0.1, 3.0)
    assert ok and lhs == 0.0 and rhs == pytest.approx(0.015)


def test_step_need_not_halve():
    net, y, x0, _ = random_network(5)
    lim = conjectured_limit(net, y)
    rho = agent_indices(net.agents, lim.xbar, SMALL_BOUNDS)
    mask = np.ones(net.m, bool)
    S0 = float(np.sum(net.astack.storage(x0, lim.xbar)))
    dt1 = high_rate_schedule(S0, S0, bound_M(net, mask, lim, S0, rho, bounds=SMALL_BOUNDS))[0]
    dt2 = high_rate_schedule(S0 / 8, S0 / 2, bound_M(net, mask, lim, S0 / 8, rho, bounds=SMALL_BOUNDS))[0]
    assert dt2 > dt1 / 2


@pytest.mark.parametrize("method", ["high_rate", "profile"])
def test_correct_limit_never_declares(method):
    net, y, x0, _ = random_network(11)
    verdict, _ = run(net, y, x0, (), method, span=100.0 if method == "profile" else 30.0)
    assert verdict.status == "running"


@pytest.mark.parametrize("method", ["high_rate", "profile"])
def test_wrong_limit_declares(method):
    net, y, x0, e = random_network(12)
    verdict, _ = run(net, y, x0, ((5.0, e),), method)
    assert verdict.status == "declared_no" and verdict.t > 5.0


@pytest.mark.parametrize("method", ["high_rate", "profile"])
def test_certificate_replays_bit_exactly(method):
    net, y, x0, e = random_network(12)
    verdict, tr = run(net, y, x0, ((5.0, e),), method)
    cert = verdict.certificate
    lim = conjectured_limit(net, y)
    k0, k1 = (int(round(t / 1e-3)) for t in (cert.t_prev, cert.t_next))
    S = [float(np.sum(net.astack.storage(tr.states[k][None, :], lim.xbar[None, :]), axis=1)[0]) for k in (k0, k1)]
    assert S == [cert.S_prev, cert.S_next]
    assert S[1] - S[0] == cert.lhs
    assert cert.lhs > cert.rhs + SLACK
    assert cert.to_json()["kind"] == cert.kind


def test_triangle_bank_one_survivor():
    net = synthesize_controllers([vehicle_drag(c) for c in (0.5, 1.0, 1.5)], TRIANGLE, [tanh_controller()] * 3,
                                 np.array([1.0, -0.5, 0.3]))
    subs = enumerate_subgraphs(TRIANGLE, 1)
    res = validate_indication(net, subs, sample_general(3, 1), 1e-4)
    netw = net.with_bias(sample_general(3, 1).w)
    masks = np.array([h.array for h in subs])
    x0 = netw.astack.h_inv(res.outputs[0]) + np.array([0.2, -0.3, 0.1])
    tr = integrate(netw, SwitchingSignal(), x0, 30.0, 1e-3)
    for method, rate in (("profile", 10.0), ("high_rate", 1000.0)):
        bank = make_bank(method, netw, masks, res.outputs, SMALL_BOUNDS,
                         AssertionConfig(method=method, delta1="auto", n_validate=200_000), 1 / rate)
        smp = sample_stream(tr, rate)
        bank.start(smp[0].t, smp[0].x)
        for s in smp[1:]:
            bank.feed(s.t, s.x)
        assert bank.survivors().tolist() == [0]


def test_profile_falls_back_without_strict_passivity():
    net = synthesize_controllers([custom_poly((0.0, 0.0, 0.0, 1.0))] * 3, TRIANGLE, [tanh_controller()] * 3,
                                 np.zeros(3))
    bank = make_bank("profile", net, np.ones((1, 3), bool), np.zeros((1, 3)), (-2, 2), AssertionConfig(), 0.1)
    assert bank.method == "high_rate"


def test_omega_linear_and_cbrt():
    th = np.logspace(-6, 1, 200)
    lin = omega_construct(linear_leak(1.0), 0.0, (-10, 10))
    assert np.max(np.abs(lin(th) / (2 * th) - 1)) <= 1e-6
    cb = omega_construct(custom_poly(h="cbrt"), 0.0, (-10, 10))
    assert np.max(np.abs(cb(th) / np.sqrt(4 * th / 3) - 1)) <= 1e-6


def test_omega_exponential_output():
    th = np.linspace(0.01, 0.9, 90)
    p = omega_construct(custom_poly(h="one_minus_exp"), 0.0, (-10, 40))
    expect = np.log(1 / (1 - np.sqrt(th))) - np.sqrt(th)
    assert np.max(np.abs(p.omega(th)[0] - expect)) <= 1e-6


def test_omega_rejects_outside_equilibrium():
    with pytest.raises(ProfileError):
        omega_construct(linear_leak(1.0), 20.0, (-10, 10))


def test_combine_single_agent():
    comb = combine_profiles([(1.0, table(lambda s: s))], D=10.0, n_validate=100_000)
    assert comb.C == pytest.approx(0.9, rel=1e-6)


def test_combine_two_linear():
    lin = table(lambda s: s)
    comb = combine_profiles([(1.0, lin), (1.0, lin)], D=10.0, n_validate=100_000)
    assert comb.C == pytest.approx(0.9, rel=1e-6)


def test_combine_mixed_profiles_validated():
    comb = combine_profiles([(1.0, table(lambda s: s)), (1.0, table(np.sqrt))], D=1.0)
    assert 0 < comb.C <= 0.9 * comb.C_search / 0.9
    assert validate_combination(comb, 1_000_000, seed=99) >= 0.0


def test_combine_requires_positive_rho():
    with pytest.raises(CombinationError):
        combine_profiles([(0.0, table(lambda s: s))], D=1.0)


def test_profile_schedule_step_example():
    t, M = profile_schedule_step(1.0, lambda s: 2 * np.asarray(s), 1.0, 4.0, 0.0)
    assert M == 2.0 and t == 2.0


def test_linear_profile_gaps_double():
    om = lambda s: 2 * np.asarray(s)
    gaps = [profile_schedule_step(1.0, om, 2.0 ** -k, 4.0, 0.0)[0] for k in range(5)]
    assert np.allclose(np.array(gaps[1:]) / np.array(gaps[:-1]), 2.0)


def test_vehicle_profile_gap_matches_table_oracle():
    a, xb = vehicle_drag(0.05), 60.0
    p = omega_construct(a, xb, (-300, 300))
    delta, S0, C = 3.7, 40.0, 0.8
    # invert the direct omega by bisection in log(theta)
    lo, hi = -60.0, math.log(600.0 ** 2)
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if p.omega(np.array([math.exp(mid)]))[0][0] < delta:
            lo = mid
        else:
            hi = mid
    oracle = S0 / (C * math.exp(lo))
    t, _ = profile_schedule_step(C, p, delta, S0, 0.0)
    assert t == pytest.approx(oracle, rel=1e-5)


def test_ode_gap_linear_closed_form():
    assert ode_schedule_gap(1.0, lambda s: 2 * np.asarray(s), 1.0, 0.5) == pytest.approx(math.log(2) / 2, rel=1e-8)


def test_profile_check_at_equilibrium():
    ok, lhs, rhs = profile_check(0.0, 0.0, 0.0, 1.0, 1.0, lambda s: 2 * np.asarray(s))
    assert ok and lhs == 0.0 and rhs == 0.0


@pytest.mark.parametrize("scheduler", ["m_based", "ode"])
def test_schedule_run_reaches_final_delta(scheduler):
    C = 0.5
    rows = profile_schedule_run(lambda t: 8.0 * math.exp(-C * t), C, lambda s: np.asarray(s), n_rounds=10,
                                scheduler=scheduler)
    assert len(rows) == 10 and all(r["passed"] for r in rows)
    assert rows[-1]["S"] <= 8.0 / 2 ** 10


def test_nominal_vehicle_run_meets_checkpoints():
    net, y, x0, _ = random_network(2)
    verdict, _ = run(net, y, x0, (), "profile", span=60.0)
    assert verdict.status == "running"


@settings(max_examples=5, deadline=None)
@given(st.integers(0, 1000))
def test_omega_inequality_on_random_states(seed):
    net, y, _, _ = random_network(seed)
    xbar = net.astack.h_inv(y)
    rho = agent_indices(net.agents, xbar, SMALL_BOUNDS)
    (comb,) = build_combined_profiles(net.agents, xbar, rho, SMALL_BOUNDS,
                                      AssertionConfig(n_validate=100_000))
    rng = np.random.default_rng(seed)
    X = rng.uniform(SMALL_BOUNDS[0], SMALL_BOUNDS[1], (1000, net.n)) * rng.choice([1e-4, 1e-2, 1], (1000, 1))
    X = np.clip(X + xbar, *SMALL_BOUNDS)
    S = np.sum(net.astack.storage(X, xbar[None, :]), axis=1)
    lhs = comb.C * comb.omega_star(S)
    rhs = np.sum(rho * (net.astack.h(X) - y) ** 2, axis=1)
    assert np.all(lhs <= rhs + 1e-9)
    assert S.max() <= energy_bound(net.agents, xbar, SMALL_BOUNDS)


@settings(max_examples=50, deadline=None)
@given(st.floats(0.5, 5), st.floats(1e-3, 0.1), st.floats(1e-3, 1), st.integers(5, 200), st.integers(0, 2 ** 31))
def test_telescoping_drop(M, dt, eps, K, seed):
    rng = np.random.default_rng(seed)
    G = 0.5 * M * dt + eps + rng.exponential(1.0, K)
    S = [100.0]
    for k in range(K):
        bound = -G[k] * dt + 0.5 * M * dt * dt
        S.append(S[-1] + bound - rng.exponential(0.01))
        assert high_rate_step(S[k], S[k + 1], G[k], dt, M)[0]
    assert S[0] - S[-1] >= eps * K * dt - 1e-12


def test_config_validation():
    with pytest.raises(ScenarioError):
        AssertionConfig.from_json({"method": "psychic"})
    cfg = AssertionConfig.from_json({"method": "high_rate", "delta1": "auto", "unknown": 1})
    assert cfg.to_json()["delta1"] == "auto"
