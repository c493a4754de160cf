"""Steady states of biased diffusively coupled networks, and controller synthesis.

For a subgraph with edge mask ``p`` the steady-state output solves

    F(y) = k^-1(y) + E diag(p) (g(E^T y - zeta*) + mu* + w) - v = 0

whose Jacobian ``diag(dk^-1) + E diag(p g') E^T`` is positive definite
for the monotone agent/controller families in :mod:`netfdi.dynamics`.
The solver is a damped Newton method with Armijo backtracking; it runs
batched over many (mask, bias) pairs at once, which is how the fault
tables are built.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from functools import cached_property

import numpy as np

from .dynamics import AgentStack, ControllerModel, ControllerStack
from .errors import SolverError, SynthesisError
from .graph_core import Graph, SubgraphMask, connected_components, incidence_matrix

__all__ = [
    "NetworkSystem",
    "SteadyStateSolution",
    "SteadyStateTable",
    "solve_steady_state",
    "solve_steady_state_batch",
    "synthesize_controllers",
    "steady_state_table",
    "min_pairwise_distance",
]

MAX_ITER = 200
ARMIJO_FACTOR = 0.5
ARMIJO_SLOPE = 1e-4


@dataclass(frozen=True, eq=False)
class NetworkSystem:
    """Graph plus agents, edge controllers, edge bias ``w`` and node feedforward ``v``."""

    graph: Graph
    agents: tuple
    controllers: tuple
    bias: np.ndarray = None
    feedforward: np.ndarray = None
    y_guess: np.ndarray = field(default=None, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "agents", tuple(self.agents))
        object.__setattr__(self, "controllers", tuple(self.controllers))
        if len(self.agents) != self.graph.n:
            raise SynthesisError(f"{len(self.agents)} agents for {self.graph.n} vertices")
        if len(self.controllers) != self.graph.m:
            raise SynthesisError(f"{len(self.controllers)} controllers for {self.graph.m} edges")
        w = np.zeros(self.graph.m) if self.bias is None else np.asarray(self.bias, dtype=float).copy()
        v = np.zeros(self.graph.n) if self.feedforward is None else np.asarray(self.feedforward, dtype=float).copy()
        if w.shape != (self.graph.m,) or not np.all(np.isfinite(w)):
            raise SynthesisError("bias must be a finite m-vector")
        if v.shape != (self.graph.n,) or not np.all(np.isfinite(v)):
            raise SynthesisError("feedforward must be a finite n-vector")
        w.setflags(write=False)
        v.setflags(write=False)
        object.__setattr__(self, "bias", w)
        object.__setattr__(self, "feedforward", v)
        if self.y_guess is not None:
            object.__setattr__(self, "y_guess", np.asarray(self.y_guess, dtype=float))

    @property
    def n(self) -> int:
        return self.graph.n

    @property
    def m(self) -> int:
        return self.graph.m

    @cached_property
    def E(self) -> np.ndarray:
        return incidence_matrix(self.graph).astype(float)

    @cached_property
    def astack(self) -> AgentStack:
        return AgentStack(self.agents)

    @cached_property
    def cstack(self) -> ControllerStack:
        return ControllerStack(self.controllers)

    def with_bias(self, w) -> "NetworkSystem":
        return replace(self, bias=np.asarray(w, dtype=float))

    def with_controllers(self, controllers, feedforward=None) -> "NetworkSystem":
        v = self.feedforward if feedforward is None else feedforward
        return replace(self, controllers=tuple(controllers), feedforward=v)

    def edge_outputs(self, y, mask=None, bias=None):
        """Controller outputs plus bias, zeroed on absent edges."""
        w = self.bias if bias is None else bias
        mu = self.cstack.mu(np.asarray(y) @ self.E) + w
        if mask is not None:
            mu = mu * _mask_array(mask)
        return mu

    def residual(self, y, mask=None, bias=None):
        y = np.asarray(y, dtype=float)
        return self.astack.k_inv(y) + self.edge_outputs(y, mask, bias) @ self.E.T - self.feedforward


@dataclass
class SteadyStateSolution:
    y: np.ndarray
    residual: np.ndarray
    iterations: int
    converged: bool
    disconnected: bool = False

    @property
    def residual_norm(self) -> float:
        return float(np.max(np.abs(self.residual)))


@dataclass
class SteadyStateTable:
    """Steady-state outputs per subgraph (rows) with their closest-pair distance."""

    outputs: np.ndarray
    min_distance: float
    closest_pair: tuple

    def __len__(self):
        return len(self.outputs)

    def __getitem__(self, k):
        return self.outputs[k]

    def __iter__(self):
        return iter(self.outputs)

    def to_json(self) -> dict:
        return {"outputs": self.outputs.tolist(), "min_distance": self.min_distance,
                "closest_pair": list(self.closest_pair)}


def _mask_array(mask) -> np.ndarray:
    if isinstance(mask, SubgraphMask):
        return mask.array.astype(float)
    return np.asarray(mask, dtype=float)


def _tol(Y):
    return 1e-9 * (1.0 + np.max(np.abs(Y), axis=-1))


def solve_steady_state_batch(net: NetworkSystem, masks, biases=None, y0=None, raise_on_fail=True):
    """Solve the steady-state equation for a batch of (mask, bias) pairs.

    Parameters
    ----------
    net : NetworkSystem
    masks : array_like, shape (B, m)
        Edge-presence masks (bool or 0/1).
    biases : array_like, shape (B, m) or (m,), optional
        Edge biases; defaults to ``net.bias``. Entries on absent edges are ignored.
    y0 : array_like, shape (B, n) or (n,), optional
        Initial guesses; default ``net.y_guess`` or ``h(0)``.
    raise_on_fail : bool
        Raise :class:`SolverError` (carrying the first failing batch index)
        when some problem does not converge in 200 iterations.

    Returns
    -------
    Y : ndarray, shape (B, n)
    resid : ndarray, shape (B,)
        Final residual infinity norms.
    iters : ndarray, shape (B,)
    converged : ndarray of bool, shape (B,)
    """
    P = np.atleast_2d(np.asarray(masks, dtype=float))
    B = P.shape[0]
    W = np.broadcast_to(net.bias if biases is None else np.asarray(biases, dtype=float), (B, net.m))
    E = net.E
    A, C, v = net.astack, net.cstack, net.feedforward
    if y0 is None:
        y0 = net.y_guess if net.y_guess is not None else A.h(np.zeros(net.n))
    Y = np.array(np.broadcast_to(np.asarray(y0, dtype=float), (B, net.n)))
    const = (C.mu_star + W) * P  # masked edge offsets that do not depend on y

    def F(Yb, Pb, Kb):
        with np.errstate(all="ignore"):
            return A.k_inv(Yb) + (C.g(Yb @ E - C.zeta_star) * Pb + Kb) @ E.T - v

    R = F(Y, P, const)
    phi = 0.5 * np.sum(R * R, axis=1)
    iters = np.zeros(B, dtype=np.int64)
    active = ~(np.max(np.abs(R), axis=1) <= _tol(Y))
    def newton_step(idx):
        Ya, Pa, Ra = Y[idx], P[idx], R[idx]
        with np.errstate(all="ignore"):
            dk = A.dk_inv(Ya)
            dg = C.dg(Ya @ E - C.zeta_star) * Pa
        J = np.einsum("im,bm,jm->bij", E, dg, E)
        J[:, np.arange(net.n), np.arange(net.n)] += dk
        try:
            step = np.linalg.solve(J, Ra[..., None])[..., 0]
        except np.linalg.LinAlgError:
            step = np.stack([np.linalg.lstsq(Jb, rb, rcond=None)[0] for Jb, rb in zip(J, Ra)])
        t = np.ones(len(idx))
        phi_a = phi[idx]
        pending = np.ones(len(idx), dtype=bool)
        Ynew, Rnew, phinew = Ya.copy(), Ra.copy(), phi_a.copy()
        for _ in range(60):
            k = np.flatnonzero(pending)
            if k.size == 0:
                break
            Yt = Ya[k] - t[k, None] * step[k]
            Rt = F(Yt, Pa[k], const[idx[k]])
            pt = 0.5 * np.sum(Rt * Rt, axis=1)
            ok = np.isfinite(pt) & (pt <= (1.0 - 2.0 * ARMIJO_SLOPE * t[k]) * phi_a[k])
            good = k[ok]
            Ynew[good], Rnew[good], phinew[good] = Yt[ok], Rt[ok], pt[ok]
            pending[good] = False
            t[k[~ok]] *= ARMIJO_FACTOR
        # entries whose line search stalled keep their previous iterate
        Y[idx], R[idx], phi[idx] = Ynew, Rnew, phinew
        return Ynew, Rnew

    for _ in range(MAX_ITER):
        if not active.any():
            break
        idx = np.flatnonzero(active)
        Ynew, Rnew = newton_step(idx)
        iters[idx] += 1
        done = np.max(np.abs(Rnew), axis=1) <= _tol(Ynew)
        active[idx[done]] = False
    # one extra full step drives converged solutions to rounding level
    idx = np.flatnonzero(np.max(np.abs(R), axis=1) <= _tol(Y))
    if idx.size:
        newton_step(idx)
    resid = np.max(np.abs(R), axis=1)
    converged = resid <= _tol(Y)
    if raise_on_fail and not converged.all():
        b = int(np.flatnonzero(~converged)[0])
        raise SolverError(f"steady-state solver did not converge for problem {b} "
                          f"(residual {resid[b]:.3e})", residual=float(resid[b]), subgraph_index=b)
    return Y, resid, iters, converged


def solve_steady_state(net: NetworkSystem, h=None, y0=None) -> SteadyStateSolution:
    """Steady-state output of ``net`` restricted to the subgraph ``h`` (default: full graph)."""
    mask = net.graph.full_mask() if h is None else h
    Y, _, iters, conv = solve_steady_state_batch(net, _mask_array(mask)[None, :], y0=y0,
                                                 raise_on_fail=False)
    y = Y[0]
    res = net.residual(y, mask)
    sol = SteadyStateSolution(y, res, int(iters[0]), bool(conv[0]),
                              len(connected_components(net.graph, _mask_array(mask) > 0)) > 1)
    if not sol.converged:
        raise SolverError(f"steady-state solver did not converge (residual {sol.residual_norm:.3e})",
                          residual=sol.residual_norm)
    return sol


def min_pairwise_distance(Y) -> tuple:
    """Smallest pairwise infinity-norm distance between rows of ``Y`` and the pair attaining it."""
    Y = np.asarray(Y, dtype=float)
    N = len(Y)
    if N < 2:
        return float("inf"), (-1, -1)
    best, pair = np.inf, (-1, -1)
    chunk = max(1, 2_000_000 // max(1, N * Y.shape[1]))
    for s in range(0, N, chunk):
        blk = Y[s:s + chunk]
        D = np.max(np.abs(blk[:, None, :] - Y[None, :, :]), axis=2)
        rows = np.arange(len(blk))
        D[rows, s + rows] = np.inf
        k = int(np.argmin(D))
        i, j = divmod(k, N)
        if D[i, j] < best:
            best, pair = float(D[i, j]), tuple(sorted((s + i, j)))
    return best, pair


def steady_state_table(net: NetworkSystem, subgraphs, bias=None, y0=None) -> SteadyStateTable:
    """Steady-state output for each subgraph under bias ``bias`` (default ``net.bias``)."""
    masks = np.array([_mask_array(h) for h in subgraphs])
    Y, _, _, _ = solve_steady_state_batch(net, masks, bias, y0=y0)
    d, pair = min_pairwise_distance(Y)
    return SteadyStateTable(Y, d, pair)


def synthesize_controllers(agents, g: Graph, base_controllers, y_star, mask=None,
                           per_component=False, verify=True) -> NetworkSystem:
    """Offsets ``zeta*``, ``mu*`` and node feedforward ``v`` making ``y_star`` the steady state.

    ``zeta* = E^T y*`` centres every controller at the target, ``v`` is the
    mean of ``k^-1(y*)`` (per connected component of ``mask`` when
    ``per_component``) so that ``v - k^-1(y*)`` lies in the range of the
    incidence matrix, and ``mu*`` is the minimum-norm solution of
    ``E mu* = v - k^-1(y*)`` over the present edges.
    """
    agents = tuple(agents)
    base_controllers = tuple(c.base() if isinstance(c, ControllerModel) else c for c in base_controllers)
    y_star = np.asarray(y_star, dtype=float)
    p = np.ones(g.m, dtype=bool) if mask is None else _mask_array(mask) > 0
    A = AgentStack(agents)
    with np.errstate(all="ignore"):
        k = A.k_inv(y_star)
    if not np.all(np.isfinite(k)):
        raise SynthesisError("target output outside the range of some output map")
    E = incidence_matrix(g).astype(float)
    if per_component:
        v = np.empty(g.n)
        for comp in connected_components(g, p):
            v[comp] = np.mean(k[comp])
    else:
        v = np.full(g.n, np.mean(k))
    rhs = v - k
    Ep = E[:, p]
    sol = np.linalg.lstsq(Ep, rhs, rcond=None)[0]
    lsq_res = float(np.max(np.abs(Ep @ sol - rhs)))
    if lsq_res > 1e-9 * (1.0 + float(np.max(np.abs(rhs)))):
        raise SynthesisError(f"target not attainable with node feedforward (residual {lsq_res:.3e})")
    mu_star = np.zeros(g.m)
    mu_star[p] = sol
    zeta_star = y_star @ E
    ctrls = tuple(c.with_offsets(zs, ms) for c, zs, ms in zip(base_controllers, zeta_star, mu_star))
    net = NetworkSystem(g, agents, ctrls, np.zeros(g.m), v, y_guess=y_star)
    if verify:
        Y, _, _, conv = solve_steady_state_batch(net, p[None, :].astype(float), raise_on_fail=False)
        err = float(np.max(np.abs(Y[0] - y_star)))
        if not conv[0] or err > 1e-6:
            raise SynthesisError(f"synthesised network misses the target by {err:.3e}")
    return net
