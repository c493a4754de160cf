import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from netfdi.dynamics import (AgentStack, ControllerStack, agent_from_spec, controller_from_spec, custom_poly,
                             gauss_legendre_adaptive, h_inverse, k_inverse, linear_controller, linear_leak,
                             passivity_index, steady_state_pair, storage_value, tanh_controller, vehicle_drag,
                             verify_meip)
from netfdi.errors import RangeError, ScenarioError

BOUNDS = (-5.0, 5.0)
LIBRARY = [
    vehicle_drag(0.05),
    vehicle_drag(1.3),
    linear_leak(0.7),
    custom_poly((0.0, 1.0, 0.0, 1.0)),
    custom_poly((0.0, 0.5, 0.0, 0.2), q=2.0, h="cbrt"),
    custom_poly((0.0, 1.0), h="one_minus_exp"),
    custom_poly((0.0, 1.0, 0.0, 0.5), h="tanh"),
    custom_poly((0.3, 1.0), q=0.5, drag=0.4),
]


def test_vehicle_kinv():
    a = vehicle_drag(0.03)
    y = np.linspace(-80, 80, 17)
    assert np.allclose(k_inverse(a, y), 0.03 * y * np.abs(y), rtol=1e-12, atol=1e-12)


def test_leak_kinv_identity():
    y = np.linspace(-3, 3, 13)
    assert np.allclose(k_inverse(linear_leak(1.0), y), y, atol=1e-12)


def test_cubic_cbrt_kinv():
    a = custom_poly((0.0, 0.0, 0.0, 1.0), h="cbrt")
    y = np.linspace(-1.5, 1.5, 31)
    # bracketed root-find route against the symbolic composition y**9
    assert np.allclose(k_inverse(a, y, bounds=(-10, 10)), y ** 9, rtol=1e-9, atol=1e-12)
    assert np.allclose(a.k_inv(y), y ** 9, rtol=1e-12)


def test_h_inverse_range_error():
    with pytest.raises(RangeError):
        h_inverse(custom_poly(h="tanh"), 1.5, bounds=(-3, 3))


def test_storage_examples():
    assert storage_value(linear_leak(1.0), 2.0, 0.0) == pytest.approx(2.0, rel=1e-12)
    assert storage_value(custom_poly(h="cbrt"), 1.0, 0.0) == pytest.approx(0.75, rel=1e-9)
    for a in LIBRARY:
        assert storage_value(a, 0.4, 0.4) == 0.0
        assert a.storage(0.4, 0.4) == 0.0


@pytest.mark.parametrize("a", LIBRARY, ids=lambda a: f"{a.name}-{a.h_kind}")
def test_closed_form_storage_matches_quadrature(a):
    rng = np.random.default_rng(1)
    for x, xb in rng.uniform(-3, 3, (25, 2)):
        assert a.storage(x, xb) == pytest.approx(storage_value(a, x, xb), rel=1e-8, abs=1e-12)


def test_quadrature_polynomial_exact():
    val = gauss_legendre_adaptive(lambda s: 3 * s ** 5 - s ** 2 + 2, -1.0, 2.0)
    assert val == pytest.approx(0.5 * 64 - 0.5 - 8 / 3 - 1 / 3 + 6, rel=1e-13)


def test_steady_state_pair_vehicle():
    p = steady_state_pair(vehicle_drag(0.02), 60.0)
    assert p.x == pytest.approx(60.0) and p.u == pytest.approx(72.0)


def test_passivity_linear():
    for xb in (-2.0, 0.0, 1.5):
        assert passivity_index(linear_leak(1.0), xb, (-4, 4)).rho == pytest.approx(1.0, rel=1e-12)


def test_passivity_vehicle_dense_grid_oracle():
    C, xb = 0.04, 60.0
    est = passivity_index(vehicle_drag(C), xb, (0.0, 200.0)).rho
    x = np.linspace(0.0, 200.0, 1_000_001)
    x = x[np.abs(x - xb) > 1e-9]
    oracle = np.min((C * x * np.abs(x) - C * xb * xb) / (x - xb))
    assert est == pytest.approx(oracle, rel=1e-6)
    assert est == pytest.approx(C * xb, rel=1e-6)


def test_passivity_cubic_vanishes_at_origin():
    assert passivity_index(custom_poly((0.0, 0.0, 0.0, 1.0)), 0.0, (-1, 1)).rho == pytest.approx(0.0, abs=1e-12)


def test_passivity_bounds_check():
    with pytest.raises(RangeError):
        passivity_index(linear_leak(1.0), 5.0, (-1, 1))


def test_meip_vehicle_passes():
    assert verify_meip(vehicle_drag(0.05), (-200, 200)).passed


def test_meip_decreasing_fails():
    rep = verify_meip(custom_poly((0.0, -1.0)), (-5, 5))
    assert "f_over_q_nondecreasing" in rep.failures()


def test_meip_saturating_not_coercive():
    rep = verify_meip(custom_poly((0.0, 0.0), h="tanh"), (-50, 50))
    assert "coercive" in rep.failures()


@settings(max_examples=100, deadline=None)
@given(st.integers(0, len(LIBRARY) - 1), st.floats(-3, 3), st.floats(-3, 3), st.floats(-20, 20))
def test_dissipation_inequality(k, x, xb, u):
    a = LIBRARY[k]
    rho = passivity_index(a, xb, BOUNDS, n_grid=4000).rho
    y, yb = float(a.h(x)), float(a.h(xb))
    ub = float(a.u_ss(xb))
    xdot = -float(a.f(x)) + float(a.q(x)) * u
    # chain rule with dS/dx = (h(x) - h(xbar)) / q(x)
    Sdot = (y - yb) / float(a.q(x)) * xdot
    assert Sdot <= (y - yb) * (u - ub) - rho * (y - yb) ** 2 + 1e-9 * (1 + abs(Sdot))


@pytest.mark.parametrize("a", LIBRARY, ids=lambda a: f"{a.name}-{a.h_kind}")
def test_storage_gradient(a):
    for x, xb in [(1.2, -0.3), (-2.0, 0.5), (0.7, 0.69)]:
        eps = 1e-5
        fd = (a.storage(x + eps, xb) - a.storage(x - eps, xb)) / (2 * eps)
        assert fd == pytest.approx((a.h(x) - a.h(xb)) / a.q(x), rel=1e-6, abs=1e-9)


@pytest.mark.parametrize("a", LIBRARY, ids=lambda a: f"{a.name}-{a.h_kind}")
def test_kinv_strictly_increasing(a):
    x = np.linspace(-3, 3, 100)
    assert np.all(np.diff(a.k_inv(a.h(x))) > 0)


@settings(max_examples=100, deadline=None)
@given(st.integers(0, len(LIBRARY) - 1), st.floats(-3, 3), st.floats(-3, 3))
def test_storage_positive(k, x, xb):
    a = LIBRARY[k]
    if abs(x - xb) > 1e-3:
        assert a.storage(x, xb) > 0


@given(st.floats(-10, 10), st.floats(0.1, 5))
def test_controller_neutral_offsets(z, gain):
    for c in (tanh_controller(), linear_controller(gain)):
        assert c(z) == c.g(z)


def test_controller_offsets():
    c = controller_from_spec({"type": "tanh", "zeta_star": 1.0, "mu_star": 2.0})
    assert c(1.0) == 2.0 and c.base() == tanh_controller()


def test_stacks_match_scalar_models():
    st_ = AgentStack(LIBRARY)
    x = np.linspace(-2, 2, len(LIBRARY))
    assert np.allclose(st_.f(x), [a.f(v) for a, v in zip(LIBRARY, x)])
    assert np.allclose(st_.h(x), [a.h(v) for a, v in zip(LIBRARY, x)])
    y = st_.h(x)
    assert np.allclose(st_.h_inv(y), x, atol=1e-10)
    assert np.allclose(st_.k_inv(y), [a.k_inv(v) for a, v in zip(LIBRARY, y)])
    cs = ControllerStack([tanh_controller(), linear_controller(2.0).with_offsets(0.5, 1.0)])
    assert np.allclose(cs.mu(np.array([0.3, 1.5])), [np.tanh(0.3), 3.0])


def test_spec_roundtrip_and_errors():
    for a in LIBRARY:
        assert agent_from_spec(a.to_spec()) == a
    with pytest.raises(ScenarioError):
        agent_from_spec({"type": "vehicle_drag"})
    with pytest.raises(ScenarioError):
        agent_from_spec({"type": "rocket"})
    with pytest.raises(ScenarioError):
        linear_controller(0.0)
