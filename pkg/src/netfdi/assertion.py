"""Convergence assertion from sampled measurements.

Two protocols decide online whether a network converges to a conjectured
equilibrium ``xbar`` and declare "no" in finite time otherwise:

* high-rate sampling: checks
  ``S(t_{k+1}) - S(t_k) <= -G(t_k) dt + (M/2) dt^2`` where
  ``G = sum_i rho_i dy_i^2 + sum_e nu_e dmu_e^2`` and ``M`` bounds ``|dG/dt|``
  on a sublevel set of the storage ``S``;
* convergence profiles: checks ``S(t_{k+1}) - S(t_k) <= -C Omega*(S(t_{k+1})) dt``
  with ``Omega*`` the pointwise minimum of tabulated per-agent profiles and
  ``C`` a combination constant found by randomized search.

Both protocols are implemented as *banks*: ``N`` independent instances
(different conjectured equilibria and edge masks, same protocol) that
consume one shared sample stream.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.interpolate import PchipInterpolator

from .dynamics import AgentModel, gauss_legendre_adaptive, h_inverse, passivity_indices
from .errors import BoundError, CombinationError, ProfileError, ScenarioError

__all__ = [
    "SLACK",
    "AssertionConfig",
    "ConjecturedLimit",
    "Certificate",
    "Verdict",
    "conjectured_limit",
    "controller_indices",
    "agent_indices",
    "dissipation_rhs",
    "sublevel_box",
    "bound_M",
    "high_rate_schedule",
    "high_rate_step",
    "Omega",
    "Profile",
    "agent_profile",
    "energy_bound",
    "build_combined_profiles",
    "omega_min",
    "omega_construct",
    "CombinedProfile",
    "combine_profiles",
    "combine_many",
    "validate_combination",
    "profile_schedule_step",
    "ode_schedule_gap",
    "profile_check",
    "profile_schedule_run",
    "HighRateBank",
    "ProfileBank",
    "make_bank",
    "run_assertion",
]

log = logging.getLogger(__name__)

SLACK = 1e-9
SAFETY = 1.1
DEFAULT_BOUNDS = (-300.0, 300.0)


@dataclass
class AssertionConfig:
    """Scenario-level knobs; ``every_sample`` also checks between scheduled profile samples."""

    method: str = "profile"
    delta1: object = 1.0
    margin: float = 0.1
    scheduler: str = "m_based"
    every_sample: bool = True
    slack: float = SLACK
    n_search: int = 100_000
    n_validate: int = 1_000_000
    seed: int = 0

    @classmethod
    def from_json(cls, obj) -> "AssertionConfig":
        obj = dict(obj or {})
        known = {k: obj[k] for k in cls.__dataclass_fields__ if k in obj}
        cfg = cls(**known)
        if cfg.method not in ("high_rate", "profile"):
            raise ScenarioError(f"unknown assertion method {cfg.method!r}")
        if cfg.scheduler not in ("m_based", "ode"):
            raise ScenarioError(f"unknown scheduler {cfg.scheduler!r}")
        return cfg

    def to_json(self) -> dict:
        return {k: getattr(self, k) for k in self.__dataclass_fields__}


@dataclass
class ConjecturedLimit:
    xbar: np.ndarray
    ybar: np.ndarray
    mubar: np.ndarray
    mask: np.ndarray


def conjectured_limit(net, y, mask=None) -> ConjecturedLimit:
    """Equilibrium data for the conjectured output ``y`` on the edge mask."""
    y = np.asarray(y, dtype=float)
    mask = np.ones(net.m, dtype=bool) if mask is None else _as_bool(mask)
    xbar = net.astack.h_inv(y)
    mubar = (net.cstack.mu(y @ net.E) + net.bias) * mask
    return ConjecturedLimit(xbar, y, mubar, mask)


def _as_bool(mask):
    return np.asarray(mask.array if hasattr(mask, "array") else mask, dtype=bool)


def controller_indices(net) -> np.ndarray:
    """Output-strict passivity indices of the static controllers: 1 / max g'."""
    c = net.cstack
    return np.where(c.is_tanh, 1.0, 1.0 / c.gain)


def agent_indices(agents, xbar, bounds) -> np.ndarray:
    """Passivity indices ``rho`` for equilibria ``xbar`` of shape (n,) or (N, n)."""
    X = np.atleast_2d(np.asarray(xbar, dtype=float))
    out = np.empty_like(X)
    for i, a in enumerate(agents):
        col = X[:, i]
        uniq, inv = np.unique(col, return_inverse=True)
        out[:, i] = passivity_indices(a, uniq, bounds)[inv]
    return out if np.ndim(xbar) == 2 else out[0]


@dataclass
class Certificate:
    """Both sides of a violated inequality and the samples it was evaluated on."""

    kind: str
    t_prev: float
    t_next: float
    lhs: float
    rhs: float
    S_prev: float = float("nan")
    S_next: float = float("nan")

    def to_json(self) -> dict:
        return dict(self.__dict__)


@dataclass
class Verdict:
    status: str = "running"
    t: float = float("nan")
    certificate: Certificate = None


# -- high-rate sampling ------------------------------------------------------

def dissipation_rhs(net, mask, limit: ConjecturedLimit, x, rho, nu=None) -> float:
    """``G(x) = sum_i rho_i (y_i - ybar_i)^2 + sum_e nu_e (mu_e - mubar_e)^2`` over present edges."""
    mask = _as_bool(mask)
    nu = controller_indices(net) if nu is None else np.asarray(nu, dtype=float)
    y = net.astack.h(np.asarray(x, dtype=float))
    dy = y - limit.ybar
    c = net.cstack
    dmu = (c.g(y @ net.E - c.zeta_star) - c.g(limit.ybar @ net.E - c.zeta_star)) * mask
    return float(np.sum(rho * dy * dy) + np.sum(nu * dmu * dmu))


def sublevel_box(agents, xbar, S_level, bounds=DEFAULT_BOUNDS, iters=100):
    """Per-agent intervals ``{x_i : S_i(x_i) <= S_level}`` (shape (N, n) each), by bisection.

    Returns ``(lo, hi, clipped)``; ``clipped`` marks intervals that hit the
    state bounds before reaching the level.
    """
    X = np.atleast_2d(np.asarray(xbar, dtype=float))
    L = np.broadcast_to(np.asarray(S_level, dtype=float).reshape(-1, 1), X.shape)
    lo_b, hi_b = float(bounds[0]), float(bounds[1])
    out_lo, out_hi = np.empty_like(X), np.empty_like(X)
    clipped = np.zeros(X.shape, dtype=bool)
    for i, a in enumerate(agents):
        xb, lv = X[:, i], L[:, i]
        for side, bound, out in ((-1, lo_b, out_lo), (1, hi_b, out_hi)):
            with np.errstate(all="ignore"):
                s_bound = a.storage(np.full_like(xb, bound), xb)
            reach = ~(s_bound > lv)
            near, far = xb.copy(), np.full_like(xb, bound)
            for _ in range(iters):
                mid = 0.5 * (near + far)
                with np.errstate(all="ignore"):
                    inside = a.storage(mid, xb) <= lv
                near = np.where(inside, mid, near)
                far = np.where(inside, far, mid)
            out[:, i] = np.where(reach, bound, far)
            clipped[:, i] |= reach & (lv > 0)
    return out_lo, out_hi, clipped


def _bound_M_batch(net, masks, xbar, S_level, rho, nu, bounds, n_grid=1000, safety=SAFETY):
    """Vectorised ``M`` for N instances (rows of ``xbar``/``masks``)."""
    masks = np.atleast_2d(np.asarray(masks, dtype=bool))
    X = np.atleast_2d(np.asarray(xbar, dtype=float))
    RHO = np.atleast_2d(np.asarray(rho, dtype=float))
    N, n = X.shape
    agents = net.agents
    lo, hi, clipped = sublevel_box(agents, X, S_level, bounds)
    if clipped.any():
        log.debug("sublevel box clipped to the state bounds for %d agent intervals", int(clipped.sum()))
    A, c, E = net.astack, net.cstack, net.E
    ybar = A.h(X)
    ylo, yhi = A.h(lo), A.h(hi)
    dy_max = np.maximum(np.abs(ylo - ybar), np.abs(yhi - ybar))
    s = np.linspace(0.0, 1.0, n_grid)
    grid = lo[..., None] + (hi - lo)[..., None] * s  # (N, n, G)
    dh_max = np.empty((N, n))
    for i, a in enumerate(agents):
        with np.errstate(divide="ignore"):
            dh_max[:, i] = np.max(a.dh(grid[:, i, :]), axis=1)
    # edge-wise ranges of zeta - zeta* and of the controller output
    ei = np.array([e[0] for e in net.graph.edges], dtype=np.int64)
    ej = np.array([e[1] for e in net.graph.edges], dtype=np.int64)
    zlo = ylo[:, ei] - yhi[:, ej] - c.zeta_star
    zhi = yhi[:, ei] - ylo[:, ej] - c.zeta_star
    zbar = ybar @ E - c.zeta_star
    glo, ghi, gbar = c.g(zlo), c.g(zhi), c.g(zbar)
    dmu_max = np.maximum(np.abs(glo - gbar), np.abs(ghi - gbar)) * masks
    off = c.mu_star + net.bias
    mu_abs = np.maximum(np.abs(glo + off), np.abs(ghi + off)) * masks
    straddle = (zlo <= 0) & (zhi >= 0)
    closest = np.where(straddle, 0.0, np.minimum(np.abs(zlo), np.abs(zhi)))
    dg_max = np.where(c.is_tanh, 1.0 - np.tanh(closest) ** 2, c.gain) * masks
    U = mu_abs @ np.abs(E).T  # (N, n) bound on |u_i - v_i|
    v = net.feedforward
    xdot_max = np.empty((N, n))
    for i, a in enumerate(agents):
        f = a.f(grid[:, i, :])
        q = a.q(grid[:, i, :])
        u_lo = (v[i] - U[:, i])[:, None]
        u_hi = (v[i] + U[:, i])[:, None]
        xdot_max[:, i] = np.max(np.maximum(np.abs(-f + q * u_lo), np.abs(-f + q * u_hi)), axis=1)
    M_dy = np.linalg.norm(dy_max, axis=1)
    M_h = np.max(dh_max, axis=1)
    M_dmu = np.linalg.norm(dmu_max, axis=1)
    M_x = np.linalg.norm(xdot_max, axis=1)
    normE = np.empty(N)
    for k in range(N):
        Ek = E[:, masks[k]]
        normE[k] = np.linalg.norm(Ek, 2) if Ek.size else 0.0
    M_mu = np.max(dg_max, axis=1, initial=0.0) * normE * M_h
    rho_star = np.max(RHO, axis=1)
    nu_star = np.max(np.where(masks, nu, 0.0), axis=1, initial=0.0)
    # dG/dt = 2 sum rho dy ydot + 2 sum nu dmu mudot
    M = safety * 2.0 * (rho_star * M_dy * M_h + nu_star * M_dmu * M_mu) * M_x
    if not np.all(np.isfinite(M)):
        raise BoundError("derivative bound is not finite on the sublevel box "
                         "(output map with unbounded slope inside the box?)")
    return M


def bound_M(net, mask, limit: ConjecturedLimit, S_level: float, rho, nu=None,
            bounds=DEFAULT_BOUNDS, n_grid=1000, safety=SAFETY) -> float:
    """Bound on ``|dG/dt|`` over the box superset of ``{S <= S_level}``."""
    if S_level < 0:
        raise BoundError("storage level must be nonnegative")
    nu = controller_indices(net) if nu is None else nu
    return float(_bound_M_batch(net, _as_bool(mask)[None, :], limit.xbar[None, :], [S_level],
                                np.asarray(rho)[None, :], nu, bounds, n_grid, safety)[0])


def high_rate_schedule(S0: float, delta1: float, M: float):
    """``(dt, eps, horizon)`` with ``dt = delta/M``, ``eps = delta/2``, ``horizon = S0/eps``."""
    eps = delta1 / 2.0
    dt = math.inf if M <= 0 else delta1 / M
    return dt, eps, S0 / eps


def high_rate_step(S_prev, S_next, G_prev, dt, M, slack=SLACK):
    """Check ``S_next - S_prev <= -G_prev dt + (M/2) dt^2``; returns (passed, lhs, rhs)."""
    lhs = S_next - S_prev
    rhs = -G_prev * dt + 0.5 * M * dt * dt
    return bool(lhs <= rhs + slack), float(lhs), float(rhs)


# -- convergence profiles ------------------------------------------------------

class Omega:
    """Increasing function tabulated as ``theta = Omega(s)``; PCHIP in log-log coordinates.

    Below the table a power law through the first two nodes is used, above
    it the last value is held (an underestimate, hence safe). Values are
    scaled by ``1 - shrink`` to absorb interpolation error.
    """

    def __init__(self, s_tab, theta_tab, shrink=1e-7):
        s_tab = np.asarray(s_tab, dtype=float)
        theta_tab = np.asarray(theta_tab, dtype=float)
        if len(s_tab) < 2 or np.any(np.diff(s_tab) <= 0) or np.any(np.diff(theta_tab) <= 0):
            raise ProfileError("profile table must be strictly increasing with at least two nodes")
        if s_tab[0] <= 0 or theta_tab[0] <= 0:
            raise ProfileError("profile table must start at positive values")
        self.s_tab, self.theta_tab = s_tab, theta_tab
        self._ls, self._lt = np.log(s_tab), np.log(theta_tab)
        self._interp = PchipInterpolator(self._ls, self._lt, extrapolate=False)
        self.beta0 = float((self._lt[1] - self._lt[0]) / (self._ls[1] - self._ls[0]))
        self.scale = 1.0 - shrink

    @property
    def s_max(self) -> float:
        return float(self.s_tab[-1])

    def __call__(self, s):
        s = np.asarray(s, dtype=float)
        out = np.zeros_like(s)
        pos = s > 0
        if not pos.any():
            return out
        ls = np.log(s[pos])
        val = np.where(ls < self._ls[0], self._lt[0] + self.beta0 * (ls - self._ls[0]),
                       np.where(ls > self._ls[-1], self._lt[-1], 0.0))
        mid = (ls >= self._ls[0]) & (ls <= self._ls[-1])
        if mid.any():
            val[mid] = self._interp(ls[mid])
        out[pos] = self.scale * np.exp(val)
        return out


@dataclass
class Profile:
    """Per-agent convergence profile: ``omega(theta) = sup S`` on ``{(h - hbar)^2 <= theta}``."""

    agent: AgentModel
    xbar: float
    bounds: tuple
    theta: np.ndarray
    omega_tab: np.ndarray
    Omega: Omega

    @property
    def beta(self) -> float:
        return self.Omega.beta0

    def omega(self, theta):
        return _omega_direct(self.agent, self.xbar, self.bounds, np.asarray(theta, dtype=float))

    def __call__(self, s):
        return self.Omega(s)


def _omega_direct(a: AgentModel, xbar, bounds, theta):
    lo, hi = float(bounds[0]), float(bounds[1])
    hb = float(a.h(xbar))
    with np.errstate(all="ignore"):
        h_lo, h_hi = float(a.h(lo)), float(a.h(hi))
    r = np.sqrt(theta)
    left_in = r < hb - h_lo
    right_in = r < h_hi - hb
    xl = np.full_like(theta, lo)
    xr = np.full_like(theta, hi)
    if left_in.any():
        xl[left_in] = h_inverse(a, hb - r[left_in], (lo, xbar))
    if right_in.any():
        xr[right_in] = h_inverse(a, hb + r[right_in], (xbar, hi))
    with np.errstate(all="ignore"):
        sl = a.storage(xl, xbar)
        sr = a.storage(xr, xbar)
    return np.maximum(sl, sr), xl, xr


def omega_construct(a: AgentModel, xbar: float, bounds=DEFAULT_BOUNDS, n_table=10_000,
                    decades=24.0) -> Profile:
    """Tabulate ``omega`` on log-spaced ``theta`` and invert it to ``Omega``."""
    lo, hi = float(bounds[0]), float(bounds[1])
    if not lo < xbar < hi:
        raise ProfileError(f"equilibrium {xbar} not inside bounds {bounds}")
    hb = float(a.h(xbar))
    with np.errstate(all="ignore"):
        spans = np.array([hb - float(a.h(lo)), float(a.h(hi)) - hb])
    spans = spans[np.isfinite(spans) & (spans > 0)]
    if spans.size == 0:
        raise ProfileError("output map is flat on the bounds")
    theta_hi = float(np.max(spans)) ** 2
    theta = np.logspace(math.log10(theta_hi) - decades, math.log10(theta_hi), n_table)
    om, xl, xr = _omega_direct(a, xbar, bounds, theta)
    # discard values dominated by cancellation in the closed-form storage
    if a.h_kind != "identity":
        scale = np.maximum.reduce([np.abs(a.storage(xl, 0.0)), np.abs(a.storage(xr, 0.0)),
                                   np.abs(a.storage(np.full_like(xl, xbar), 0.0)),
                                   np.abs(hb * (xr - xbar)), np.abs(hb * (xl - xbar))])
        ok = om > 1e-11 * scale
    else:
        ok = np.ones_like(om, dtype=bool)
    ok &= np.isfinite(om) & (om > 0)
    th, om = theta[ok], om[ok]
    if th.size < 2:
        raise ProfileError("profile table is empty (omega infinite or zero everywhere)")
    # keep the strictly increasing part (clipping on both sides produces a plateau)
    keep = np.concatenate(([True], np.diff(om) > 0))
    keep &= om >= np.maximum.accumulate(om)
    th, om = th[keep], om[keep]
    strict = np.concatenate(([True], np.diff(om) > 0))
    th, om = th[strict], om[strict]
    return Profile(a, float(xbar), (lo, hi), th, om, Omega(om, th))


@dataclass(eq=False)
class CombinedProfile:
    """``C`` and ``Omega* = min_i Omega_i`` with ``sum rho_i Omega*(s_i) >= C Omega*(sum s_i)``."""

    C: float
    omegas: tuple
    rho: np.ndarray
    D: float
    C_search: float = float("nan")
    betas: tuple = ()
    halvings: int = 0
    near_origin_bound: float = float("nan")

    def omega_star(self, s):
        return omega_min(self.omegas, s)

    def rate(self, s):
        return self.C * self.omega_star(s)


def omega_min(omegas, s):
    s = np.asarray(s, dtype=float)
    out = omegas[0](s)
    for om in omegas[1:]:
        out = np.minimum(out, om(s))
    return out


def _sample_thetas(n, D, K, rng):
    """Randomised (theta_1..theta_n) in [0, D]^n concentrated where the ratio is smallest."""
    parts = []
    k = K // 5
    lo = math.log(D * 1e-12)
    for alpha in (1.0, 0.2):
        dirs = rng.dirichlet(np.full(n, alpha), size=k)
        scale = np.exp(rng.uniform(lo, math.log(n * D), size=(k, 1)))
        parts.append(np.minimum(dirs * scale, D))
    axis = np.zeros((k, n))
    axis[np.arange(k), rng.integers(0, n, size=k)] = np.exp(rng.uniform(lo, math.log(D), size=k))
    axis += np.exp(rng.uniform(lo, math.log(D), size=(k, n))) * (rng.random((k, n)) < 0.2) * 1e-3
    parts.append(np.minimum(axis, D))
    parts.append(rng.uniform(0, D, size=(k, n)))
    rest = K - 4 * k
    parts.append(np.exp(rng.uniform(lo, math.log(D), size=(rest, n))))
    th = np.vstack(parts)
    th[np.all(th == 0, axis=1), 0] = D
    return th


def _ratio_matrix(omegas, thetas):
    tot = omega_min(omegas, thetas.sum(axis=1))
    with np.errstate(divide="ignore", invalid="ignore"):
        return omega_min(omegas, thetas) / tot[:, None]


def combine_many(omegas, RHO, D, margin=0.1, n_search=100_000, n_validate=1_000_000, seed=0):
    """Combination constants for many ``rho`` vectors sharing the same ``Omega*``.

    Returns ``(C, C_search, halvings)`` arrays of length ``len(RHO)``.
    """
    omegas = tuple(omegas)
    RHO = np.atleast_2d(np.asarray(RHO, dtype=float))
    if np.any(RHO <= 0):
        raise CombinationError("profile method needs strictly positive passivity indices")
    n = RHO.shape[1]
    rng = np.random.default_rng(seed)
    R = _ratio_matrix(omegas, _sample_thetas(n, D, n_search, rng))
    R = R[np.all(np.isfinite(R), axis=1)]
    C_search = np.min(R @ RHO.T, axis=0)
    C = (1.0 - margin) * C_search
    if np.any(C <= 0):
        raise CombinationError("estimated combination constant is not positive")
    halvings = np.zeros(len(C), dtype=np.int64)
    vrng = np.random.default_rng(seed + 7919)
    remaining = n_validate
    while remaining > 0:
        k = min(100_000, remaining)
        Rv = _ratio_matrix(omegas, _sample_thetas(n, D, k, vrng))
        Rv = Rv[np.all(np.isfinite(Rv), axis=1)]
        F = np.min(Rv @ RHO.T, axis=0)
        while np.any(F < C):
            bad = F < C
            C[bad] *= 0.5
            halvings[bad] += 1
        remaining -= k
    if np.any(halvings):
        log.info("combination constant halved for %d profiles after validation", int(np.sum(halvings > 0)))
    return C, C_search, halvings


def combine_profiles(profiles, D, margin=0.1, n_search=100_000, n_validate=1_000_000,
                     seed=0) -> CombinedProfile:
    """Combine ``[(rho_i, Omega_i), ...]`` into ``(C, Omega*)`` valid on ``[0, D]^n``."""
    rho = np.array([p[0] for p in profiles], dtype=float)
    omegas = []
    for _, om in profiles:
        om = om.Omega if isinstance(om, Profile) else om
        if all(om is not o for o in omegas):
            omegas.append(om)
    C, C_search, halv = combine_many(omegas, rho[None, :], D, margin, n_search, n_validate, seed)
    betas = tuple(getattr(o, "beta0", float("nan")) for o in omegas)
    b = max(betas)
    near = float(np.min(rho) * min(1.0, len(rho) ** (1.0 - b)))
    return CombinedProfile(float(C[0]), tuple(omegas), rho, float(D), float(C_search[0]), betas,
                           int(halv[0]), near)


def validate_combination(comb: CombinedProfile, n_points=1_000_000, seed=12345, chunk=100_000):
    """Smallest ``sum rho_i Omega*(theta_i) - C Omega*(sum theta_i)`` over fresh samples."""
    rng = np.random.default_rng(seed)
    n = len(comb.rho)
    worst = math.inf
    done = 0
    while done < n_points:
        k = min(chunk, n_points - done)
        th = _sample_thetas(n, comb.D, k, rng)
        lhs = comb.omega_star(th) @ comb.rho
        rhs = comb.C * comb.omega_star(th.sum(axis=1))
        worst = min(worst, float(np.min(lhs - rhs)))
        done += k
    return worst


def profile_schedule_step(C, omega, delta_next, S0, t_k, grid_step=0.0):
    """Next scheduled sample: ``t_k + S0 / (C Omega*(delta_next)) + grid_step``."""
    M = float(C * np.asarray(omega(np.array([delta_next])))[0])
    if M <= 0:
        return math.inf, M
    return t_k + S0 / M + grid_step, M


def ode_schedule_gap(C, omega, delta_prev, delta_next):
    """Time for ``S' = -C Omega*(S)`` to fall from ``delta_prev`` to ``delta_next``."""
    f = lambda s: 1.0 / (C * omega(np.asarray(s)))
    return gauss_legendre_adaptive(f, delta_next, delta_prev, rtol=1e-8)


def profile_check(S_prev, S_next, t_prev, t_next, C, omega, slack=SLACK):
    """``S_next - S_prev <= -C Omega*(S_next) (t_next - t_prev)``; returns (passed, lhs, rhs)."""
    lhs = S_next - S_prev
    rhs = -C * float(np.asarray(omega(np.array([S_next])))[0]) * (t_next - t_prev)
    return bool(lhs <= rhs + slack), float(lhs), float(rhs)


def profile_schedule_run(S_func, C, omega, n_rounds=10, t0=0.0, grid_step=0.0, scheduler="m_based",
                         slack=SLACK):
    """Run the scheduled (sparse) profile protocol on a storage trace ``S_func(t)``.

    Returns a list of dicts ``{t, S, delta, passed}``, one per scheduled sample.
    """
    S0 = float(S_func(t0))
    delta, t_k, S_k = S0, t0, S0
    t_ode = t0
    rows = []
    for _ in range(n_rounds):
        d_next = delta / 2.0
        if scheduler == "ode":
            t_ode += ode_schedule_gap(C, omega, delta, d_next)
            t_next = max(t_ode, t_k) + grid_step
        else:
            t_next, _ = profile_schedule_step(C, omega, d_next, S0, t_k, grid_step)
        S_next = float(S_func(t_next))
        ok, _, _ = profile_check(S_k, S_next, t_k, t_next, C, omega, slack)
        rows.append({"t": t_next, "S": S_next, "delta": d_next, "passed": ok and S_next <= d_next + slack})
        if not rows[-1]["passed"]:
            break
        delta, t_k, S_k = d_next, t_next, S_next
    return rows


# -- instance banks ----------------------------------------------------------

class _Bank:
    """Common state of N assertion instances fed by one sample stream."""

    def __init__(self, net, masks, ybar, rho, bounds, config: AssertionConfig, stream_dt):
        self.net = net
        self.masks = np.atleast_2d(np.asarray(masks, dtype=bool))
        self.ybar = np.atleast_2d(np.asarray(ybar, dtype=float))
        self.N = len(self.ybar)
        self.xbar = net.astack.h_inv(self.ybar)
        self.rho = np.atleast_2d(np.asarray(rho, dtype=float))
        self.bounds = bounds
        self.config = config
        self.stream_dt = float(stream_dt)
        self.alive = np.ones(self.N, dtype=bool)
        self.declared_at = np.full(self.N, np.nan)
        self.certificates = {}
        self.n_checks = 0

    def storage(self, x):
        return np.sum(self.net.astack.storage(np.asarray(x, dtype=float)[None, :], self.xbar), axis=1)

    def _declare(self, idx, t, kind, lhs, rhs, S_prev, S_next, t_prev):
        for k, i in enumerate(idx):
            self.alive[i] = False
            self.declared_at[i] = t
            self.certificates[int(i)] = Certificate(kind, float(t_prev[k]), float(t), float(lhs[k]),
                                                    float(rhs[k]), float(S_prev[k]), float(S_next[k]))

    def survivors(self) -> np.ndarray:
        return np.flatnonzero(self.alive)


def _initial_delta(config, S):
    """``delta_1`` per instance; ``"auto"`` (or a nonpositive value) uses the storage at start."""
    d = config.delta1
    if d == "auto" or float(d) <= 0:
        return np.where(S > 0, S, 1.0)
    return np.full(len(S), float(d))


class HighRateBank(_Bank):
    """High-rate sampling protocol for N instances with per-instance schedules."""

    method = "high_rate"

    def __init__(self, net, masks, ybar, rho, bounds, config, stream_dt):
        super().__init__(net, masks, ybar, rho, bounds, config, stream_dt)
        self.nu = controller_indices(net)
        c = net.cstack
        self.gbar = c.g(self.ybar @ net.E - c.zeta_star)

    def G(self, x):
        y = self.net.astack.h(np.asarray(x, dtype=float))
        c = self.net.cstack
        dy = y[None, :] - self.ybar
        dmu = (c.g(y @ self.net.E - c.zeta_star)[None, :] - self.gbar) * self.masks
        return np.sum(self.rho * dy * dy, axis=1) + np.sum(self.nu * dmu * dmu, axis=1)

    def _new_phase(self, idx, t, S):
        # M lives on the sublevel set at max(S, delta) so that dt = delta/M stays bounded once S
        # is far below delta; a bound on a larger set stays valid, so refresh only after a 4x drop
        level = np.maximum(S, self.delta)
        stale = idx[level[idx] <= 0.25 * self.M_level[idx]]
        if stale.size:
            self.M[stale] = _bound_M_batch(self.net, self.masks[stale], self.xbar[stale], level[stale],
                                           self.rho[stale], self.nu, self.bounds)
            self.M_level[stale] = level[stale]
        for i in idx:
            dt, eps, horizon = high_rate_schedule(S[i], self.delta[i], self.M[i])
            steps = max(1, int(math.floor(dt / self.stream_dt + 1e-9))) if math.isfinite(dt) else 1
            self.step[i] = steps * self.stream_dt
            self.phase_end[i] = t + horizon
        self.next_t[idx] = t + self.step[idx]

    def start(self, t, x):
        S = self.storage(x)
        self.delta = _initial_delta(self.config, S)
        self.M = np.zeros(self.N)
        self.M_level = np.full(self.N, np.inf)
        self.step = np.full(self.N, self.stream_dt)
        self.phase_end = np.zeros(self.N)
        self.next_t = np.zeros(self.N)
        self.last_t = np.full(self.N, float(t))
        self.last_S = S
        self.last_G = self.G(x)
        self._new_phase(np.arange(self.N), t, S)

    def feed(self, t, x) -> np.ndarray:
        due = self.alive & (t >= self.next_t - 1e-9 * self.stream_dt)
        if not due.any():
            return np.empty(0, dtype=np.int64)
        idx = np.flatnonzero(due)
        S = self.storage(x)
        G = self.G(x)
        dt = t - self.last_t[idx]
        lhs = S[idx] - self.last_S[idx]
        rhs = -self.last_G[idx] * dt + 0.5 * self.M[idx] * dt * dt
        self.n_checks += len(idx)
        bad = lhs > rhs + self.config.slack
        if bad.any():
            b = idx[bad]
            self._declare(b, t, "high_rate", lhs[bad], rhs[bad], self.last_S[b], S[b], self.last_t[b])
        ok = idx[~bad]
        self.last_t[ok] = t
        self.last_S[ok] = S[ok]
        self.last_G[ok] = G[ok]
        self.next_t[ok] = t + self.step[ok]
        roll = ok[t >= self.phase_end[ok] - 1e-9]
        if roll.size:
            self.delta[roll] *= 0.5
            self._new_phase(roll, t, S)
        return idx[bad]


class ProfileBank(_Bank):
    """Convergence-profile protocol for N instances.

    With ``config.every_sample`` the profile inequality is checked on every
    consecutive pair of stream samples (valid for any sampling gap); the
    scheduled rounds additionally assert ``S <= delta_k``.
    """

    method = "profile"

    def __init__(self, net, masks, ybar, rho, bounds, config, stream_dt, combined):
        super().__init__(net, masks, ybar, rho, bounds, config, stream_dt)
        self.combined = list(combined)
        self.C = np.array([c.C for c in self.combined])
        groups = {}
        for i, c in enumerate(self.combined):
            groups.setdefault(id(c.omegas), (c.omegas, []))[1].append(i)
        self._groups = [(om, np.array(ix)) for om, ix in groups.values()]

    def omega_star(self, S):
        """``Omega*`` of every instance at its own storage value (``S`` has length N)."""
        out = np.empty_like(S)
        for om, ix in self._groups:
            out[ix] = omega_min(om, S[ix])
        return out

    def _schedule(self, idx, t):
        for i in idx:
            if self.S0[i] <= 1e-300 or self.delta[i] <= 0:
                self.next_ckpt[i] = math.inf
                continue
            d_next = self.delta[i] / 2.0
            om = self.combined[i].omegas
            fn = lambda s, om=om: omega_min(om, s)
            if self.config.scheduler == "ode":
                self.t_ode[i] += ode_schedule_gap(self.C[i], fn, self.delta[i], d_next)
                self.next_ckpt[i] = max(self.t_ode[i], t) + self.stream_dt
            else:
                self.next_ckpt[i], _ = profile_schedule_step(self.C[i], fn, d_next, self.S0[i], t,
                                                             self.stream_dt)

    def start(self, t, x):
        S = self.storage(x)
        self.S0 = S.copy()
        self.delta = S.copy()
        self.rounds = np.zeros(self.N, dtype=np.int64)
        self.last_t = np.full(self.N, float(t))
        self.last_S = S
        self.next_ckpt = np.full(self.N, math.inf)
        self.ckpt_t = np.full(self.N, float(t))
        self.ckpt_S = S.copy()
        self.t_ode = np.full(self.N, float(t))
        self._schedule(range(self.N), t)

    def feed(self, t, x) -> np.ndarray:
        idx = np.flatnonzero(self.alive)
        if idx.size == 0:
            return idx
        S = self.storage(x)
        declared = []
        ck = idx[t >= self.next_ckpt[idx] - 1e-9 * self.stream_dt]
        if self.config.every_sample:
            dt = t - self.last_t[idx]
            lhs = S[idx] - self.last_S[idx]
            rhs = -self.C[idx] * self.omega_star(S)[idx] * dt
            self.n_checks += len(idx)
            bad = lhs > rhs + self.config.slack
            if bad.any():
                b = idx[bad]
                self._declare(b, t, "profile", lhs[bad], rhs[bad], self.last_S[b], S[b], self.last_t[b])
                declared.extend(b.tolist())
        ck = ck[self.alive[ck]]
        if ck.size:
            dt = t - self.ckpt_t[ck]
            lhs = S[ck] - self.ckpt_S[ck]
            rhs = -self.C[ck] * self.omega_star(S)[ck] * dt
            d_next = self.delta[ck] / 2.0
            bad = (lhs > rhs + self.config.slack) | (S[ck] > d_next + self.config.slack)
            if bad.any():
                b = ck[bad]
                self._declare(b, t, "profile_schedule", lhs[bad], rhs[bad], self.ckpt_S[b], S[b],
                              self.ckpt_t[b])
                declared.extend(b.tolist())
            good = ck[~bad]
            self.delta[good] *= 0.5
            self.rounds[good] += 1
            self.ckpt_t[good] = t
            self.ckpt_S[good] = S[good]
            self._schedule(good, t)
        self.last_t[idx] = t
        self.last_S[idx] = S[idx]
        return np.array(sorted(declared), dtype=np.int64)


def make_bank(method, net, masks, ybar, bounds, config: AssertionConfig, stream_dt,
              rho=None, combined=None, D=None):
    """Build a bank, computing passivity indices and combined profiles when not supplied.

    Falls back to the high-rate method when some passivity index is zero.
    """
    ybar = np.atleast_2d(np.asarray(ybar, dtype=float))
    masks = np.atleast_2d(np.asarray(masks, dtype=bool))
    xbar = net.astack.h_inv(ybar)
    if rho is None:
        rho = agent_indices(net.agents, xbar, bounds)
    if method == "profile" and np.any(np.asarray(rho) <= 0):
        log.warning("zero passivity index: profile method unavailable, using high-rate sampling")
        method = "high_rate"
    if method == "high_rate":
        return HighRateBank(net, masks, ybar, rho, bounds, config, stream_dt)
    if combined is None:
        combined = build_combined_profiles(net.agents, xbar, rho, bounds, config, D)
    return ProfileBank(net, masks, ybar, rho, bounds, config, stream_dt, combined)


_PROFILE_CACHE = {}


def agent_profile(a: AgentModel, xbar: float, bounds) -> Omega:
    """Cached per-agent ``Omega``; identity-output agents share one table per (q, bounds)."""
    bounds = (float(bounds[0]), float(bounds[1]))
    if a.profile_shift_invariant():
        # tabulate at the centre: the smallest admissible domain, clamped above
        key = ("shift", a.h_kind, a.q0, bounds)
        xb = 0.5 * (bounds[0] + bounds[1])
    else:
        key = (a, float(xbar), bounds)
        xb = float(xbar)
    om = _PROFILE_CACHE.get(key)
    if om is None:
        om = omega_construct(a, xb, bounds).Omega
        _PROFILE_CACHE[key] = om
    return om


def energy_bound(agents, xbar, bounds) -> float:
    """``D = sum_i max_{bounds} S_i`` for the equilibria ``xbar`` (max over rows when 2-D)."""
    X = np.atleast_2d(np.asarray(xbar, dtype=float))
    tot = np.zeros(len(X))
    for i, a in enumerate(agents):
        with np.errstate(all="ignore"):
            s = np.maximum(a.storage(np.full(len(X), bounds[0]), X[:, i]),
                           a.storage(np.full(len(X), bounds[1]), X[:, i]))
        tot += np.where(np.isfinite(s), s, 0.0)
    return float(np.max(tot))


def build_combined_profiles(agents, xbar, rho, bounds, config: AssertionConfig, D=None) -> list:
    """One :class:`CombinedProfile` per row of ``xbar`` (shared work where possible)."""
    X = np.atleast_2d(np.asarray(xbar, dtype=float))
    RHO = np.atleast_2d(np.asarray(rho, dtype=float))
    D = energy_bound(agents, X, bounds) if D is None else D
    groups = {}
    for j in range(len(X)):
        oms = []
        for i, a in enumerate(agents):
            om = agent_profile(a, X[j, i], bounds)
            if all(om is not o for o in oms):
                oms.append(om)
        key = tuple(id(o) for o in oms)
        groups.setdefault(key, (tuple(oms), []))[1].append(j)
    out = [None] * len(X)
    for oms, rows in groups.values():
        rows = np.array(rows)
        C, Cs, halv = combine_many(oms, RHO[rows], D, config.margin, config.n_search,
                                   config.n_validate, config.seed)
        betas = tuple(o.beta0 for o in oms)
        for k, j in enumerate(rows):
            out[j] = CombinedProfile(float(C[k]), oms, RHO[j], D, float(Cs[k]), betas, int(halv[k]))
    return out


def run_assertion(method, samples, net, mask, limit: ConjecturedLimit, config=None,
                  bounds=DEFAULT_BOUNDS, rho=None, combined=None) -> Verdict:
    """Drive one instance over a precomputed list of samples (``.t`` and ``.x``)."""
    config = config or AssertionConfig(method=method)
    if len(samples) < 2:
        return Verdict()
    stream_dt = samples[1].t - samples[0].t
    bank = make_bank(method, net, _as_bool(mask), limit.ybar, bounds, config, stream_dt, rho,
                     None if combined is None else [combined])
    bank.start(samples[0].t, samples[0].x)
    for smp in samples[1:]:
        if bank.feed(smp.t, smp.x).size:
            return Verdict("declared_no", smp.t, bank.certificates[0])
    return Verdict()
