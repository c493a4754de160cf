"""Fault detection, the adversarial-game planner and fault isolation.

All three protocols share one pattern: a table of subgraphs, one
interaction protocol per subgraph, steady-state limits computed ahead of
time, and assertion instances that eliminate wrong conjectures online.

* detection: one kernel-constrained bias on the full graph; any
  declaration means some link has failed;
* adversary game: edges are removed before the run, a shared general bias
  reveals which subgraph is running, then a one-off broadcast switches
  every agent to the controllers synthesised for that subgraph;
* isolation: a stable phase under the believed subgraph's kernel protocol
  alternates with exploratory phases under the shared general bias.
"""
from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field

import numpy as np

from . import assertion as asr
from .dynamics import AgentStack, agent_from_spec, controller_from_spec
from .errors import GraphError, IndicationError, ProtocolError, SynthesisError
from .graph_core import Graph, enumerate_subgraphs, incidence_matrix, is_connected, vertex_connectivity
from .indication import sample_general, sample_kernel, validate_indication
from .simulator import Integrator, SwitchingSignal, _n_steps, sample_stride
from .steady_state import NetworkSystem, solve_steady_state_batch, synthesize_controllers

__all__ = [
    "MAX_RESTARTS",
    "FdiEventLog",
    "FdiPhase",
    "FdiResult",
    "SynthesisBundle",
    "detect_synthesize",
    "detect_run",
    "adversary_synthesize",
    "adversary_play",
    "isolate_synthesize",
    "isolate_run",
    "broadcast_bits",
]

log = logging.getLogger(__name__)

MAX_RESTARTS = 10


def broadcast_bits(N: int) -> int:
    """Bits needed to broadcast one of ``N`` subgraph indices."""
    return int(math.ceil(math.log2(N))) if N > 1 else 0


class FdiEventLog:
    """Append-only event records ``{t, kind, ...payload}`` with nondecreasing times."""

    def __init__(self, events=None):
        self.events = list(events or [])

    def append(self, t, kind, **payload):
        t = round(float(t), 9)
        if self.events and t < self.events[-1]["t"]:
            raise ValueError("event times must be nondecreasing")
        rec = {"t": t, "kind": kind}
        rec.update(payload)
        self.events.append(rec)
        return rec

    def of_kind(self, kind) -> list:
        return [e for e in self.events if e["kind"] == kind]

    def times(self, kind) -> list:
        return [e["t"] for e in self.of_kind(kind)]

    def __iter__(self):
        return iter(self.events)

    def __len__(self):
        return len(self.events)

    def to_jsonl(self, path):
        with open(path, "w") as fh:
            for ev in self.events:
                fh.write(json.dumps(ev, sort_keys=True) + "\n")

    @classmethod
    def from_jsonl(cls, path) -> "FdiEventLog":
        with open(path) as fh:
            return cls(json.loads(line) for line in fh if line.strip())


@dataclass
class FdiPhase:
    mode: str
    j: int = None
    has_faulted: np.ndarray = None
    round: int = 0


@dataclass
class FdiResult:
    log: FdiEventLog
    trajectory: object
    final_phase: FdiPhase
    summary: dict = field(default_factory=dict)


def _removed_lists(masks) -> list:
    return [tuple(int(e) for e in np.flatnonzero(~m)) for m in masks]


@dataclass(eq=False)
class SynthesisBundle:
    """Everything a monitoring run needs, indexed by subgraph (index 0 is the full graph).

    ``ip_*`` rows define the per-subgraph interaction protocols,
    ``sslimits`` the exploratory-phase limits under the shared general
    bias, and the ``*_rho``/``*_C`` arrays the profile data of the
    assertion instances.
    """

    mode: str
    graph: Graph
    agents: tuple
    base_controllers: tuple
    y_star: np.ndarray
    r: int
    masks: np.ndarray
    ip_mu_star: np.ndarray
    ip_bias: np.ndarray
    ip_feedforward: np.ndarray
    nominal_mu_star: np.ndarray = None
    nominal_feedforward: np.ndarray = None
    exploration_bias: np.ndarray = None
    sslimits: np.ndarray = None
    ip_separation: np.ndarray = None
    ip_flags: np.ndarray = None
    stable_rho: np.ndarray = None
    stable_C: float = float("nan")
    explore_rho: np.ndarray = None
    explore_C: np.ndarray = None
    D: float = float("nan")
    bounds: tuple = asr.DEFAULT_BOUNDS
    assertion: asr.AssertionConfig = field(default_factory=asr.AssertionConfig)
    seed: int = 0
    report: dict = field(default_factory=dict)
    scenario_sha256: str = ""

    @property
    def N(self) -> int:
        return len(self.masks)

    @property
    def bits(self) -> int:
        return broadcast_bits(self.N)

    @property
    def removed(self) -> list:
        return _removed_lists(self.masks)

    def index_of(self, removed) -> int:
        target = tuple(sorted(int(e) for e in removed))
        for j, rem in enumerate(self.removed):
            if rem == target:
                return j
        return -1

    def _net(self, mu_star, bias, v) -> NetworkSystem:
        zs = self.y_star @ _incidence(self.graph)
        ctrls = tuple(c.with_offsets(z, m) for c, z, m in zip(self.base_controllers, zs, mu_star))
        return NetworkSystem(self.graph, self.agents, ctrls, bias, v, y_guess=self.y_star)

    def ip_network(self, j: int) -> NetworkSystem:
        return self._net(self.ip_mu_star[j], self.ip_bias[j], self.ip_feedforward[j])

    def exploration_network(self) -> NetworkSystem:
        if self.exploration_bias is None:
            raise ProtocolError(f"{self.mode} bundle has no exploration protocol")
        return self._net(self.nominal_mu_star, self.exploration_bias, self.nominal_feedforward)

    # assertion banks -----------------------------------------------------

    def _combined(self, xbar, rho, C):
        out, shared = [], {}
        for k in range(len(xbar)):
            oms = []
            for i, a in enumerate(self.agents):
                om = asr.agent_profile(a, xbar[k, i], self.bounds)
                if all(om is not o for o in oms):
                    oms.append(om)
            oms = shared.setdefault(tuple(id(o) for o in oms), tuple(oms))
            out.append(asr.CombinedProfile(float(C[k]), oms, rho[k], self.D))
        return out

    def stable_bank(self, j: int, stream_dt: float, method=None):
        method = method or self.assertion.method
        net = self.ip_network(j)
        ybar = self.y_star[None, :]
        combined = None
        if method == "profile" and self.stable_C > 0:
            combined = self._combined(net.astack.h_inv(ybar), self.stable_rho[None, :], [self.stable_C])
        return asr.make_bank(method, net, self.masks[j][None, :], ybar, self.bounds, self.assertion,
                             stream_dt, rho=self.stable_rho[None, :], combined=combined, D=self.D)

    def exploration_bank(self, stream_dt: float, method=None):
        method = method or self.assertion.method
        net = self.exploration_network()
        combined = None
        if method == "profile" and np.all(self.explore_C > 0):
            if not hasattr(self, "_explore_combined"):
                self._explore_combined = self._combined(net.astack.h_inv(self.sslimits),
                                                        self.explore_rho, self.explore_C)
            combined = self._explore_combined
        return asr.make_bank(method, net, self.masks, self.sslimits, self.bounds, self.assertion,
                             stream_dt, rho=self.explore_rho, combined=combined, D=self.D)

    # persistence -----------------------------------------------------------

    def to_json(self) -> dict:
        arr = lambda a: None if a is None else np.asarray(a).tolist()
        return {
            "mode": self.mode, "graph": self.graph.to_json(),
            "agents": [a.to_spec() for a in self.agents],
            "base_controllers": [c.to_spec() for c in self.base_controllers],
            "y_star": arr(self.y_star), "r": self.r, "removed": [list(r) for r in self.removed],
            "ip_mu_star": arr(self.ip_mu_star), "ip_bias": arr(self.ip_bias),
            "ip_feedforward": arr(self.ip_feedforward),
            "nominal_mu_star": arr(self.nominal_mu_star),
            "nominal_feedforward": arr(self.nominal_feedforward),
            "exploration_bias": arr(self.exploration_bias), "sslimits": arr(self.sslimits),
            "ip_separation": arr(self.ip_separation), "ip_flags": arr(self.ip_flags),
            "stable_rho": arr(self.stable_rho), "stable_C": self.stable_C,
            "explore_rho": arr(self.explore_rho), "explore_C": arr(self.explore_C),
            "D": self.D, "bounds": list(self.bounds), "assertion": self.assertion.to_json(),
            "seed": self.seed, "report": self.report, "scenario_sha256": self.scenario_sha256,
        }

    @classmethod
    def from_json(cls, obj) -> "SynthesisBundle":
        g = Graph.from_json(obj["graph"])
        masks = np.ones((len(obj["removed"]), g.m), dtype=bool)
        for j, rem in enumerate(obj["removed"]):
            masks[j, list(rem)] = False
        opt = lambda k: None if obj.get(k) is None else np.asarray(obj[k], dtype=float)
        return cls(
            mode=obj["mode"], graph=g,
            agents=tuple(agent_from_spec(a) for a in obj["agents"]),
            base_controllers=tuple(controller_from_spec(c) for c in obj["base_controllers"]),
            y_star=np.asarray(obj["y_star"], dtype=float), r=int(obj["r"]), masks=masks,
            ip_mu_star=opt("ip_mu_star"), ip_bias=opt("ip_bias"), ip_feedforward=opt("ip_feedforward"),
            nominal_mu_star=opt("nominal_mu_star"), nominal_feedforward=opt("nominal_feedforward"),
            exploration_bias=opt("exploration_bias"), sslimits=opt("sslimits"),
            ip_separation=opt("ip_separation"),
            ip_flags=None if obj.get("ip_flags") is None else np.asarray(obj["ip_flags"], dtype=bool),
            stable_rho=opt("stable_rho"), stable_C=float(obj["stable_C"]),
            explore_rho=opt("explore_rho"), explore_C=opt("explore_C"), D=float(obj["D"]),
            bounds=tuple(obj["bounds"]), assertion=asr.AssertionConfig.from_json(obj["assertion"]),
            seed=int(obj["seed"]), report=obj.get("report", {}),
            scenario_sha256=obj.get("scenario_sha256", ""),
        )

    def save(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_json(), fh)

    @classmethod
    def load(cls, path) -> "SynthesisBundle":
        with open(path) as fh:
            return cls.from_json(json.load(fh))


def _incidence(g):
    return incidence_matrix(g).astype(float)


def _sub_seed(seed, *keys) -> int:
    return int(np.random.SeedSequence([int(seed), *[int(k) for k in keys]]).generate_state(1)[0])


def _kernel_for(net, masks, j, seed, magnitude, min_sep, attempts=10):
    """Kernel bias for subgraph ``j`` whose limit is separated from every other subgraph's.

    Returns ``(w, separation)``. The unbiased and biased problems are
    solved in one batch so the nominal-shift check compares like with like.
    """
    K = len(masks)
    mj = masks[j]
    last = float("nan")
    for k in range(attempts):
        w = sample_kernel(net.graph, _sub_seed(seed, j, k), magnitude, mask=mj).w
        P = np.vstack([masks, mj[None, :]]).astype(float)
        B = np.vstack([np.broadcast_to(w, (K, net.m)), np.zeros((1, net.m))])
        Y, _, _, _ = solve_steady_state_batch(net, P, B, y0=np.broadcast_to(net.y_guess, (K + 1, net.n)))
        shift = float(np.max(np.abs(Y[j] - Y[K])))
        d = np.max(np.abs(Y[:K] - Y[j]), axis=1)
        d[j] = np.inf
        sep = float(np.min(d)) if K > 1 else float("inf")
        if sep >= min_sep and shift <= 1e-8:
            return w, sep
        log.info("kernel bias for subgraph %d rejected (separation %.3e, shift %.3e)", j, sep, shift)
        last = sep
    raise IndicationError(f"no kernel indication vector for subgraph {j} after {attempts} attempts "
                          f"(best separation {last:.3e})")


def _profile_data(agents, Y, bounds, config):
    """Passivity indices and combination constants for the limits in the rows of ``Y``."""
    xbar = AgentStack(agents).h_inv(Y)
    rho = asr.agent_indices(agents, xbar, bounds)
    D = asr.energy_bound(agents, xbar, bounds)
    if config.method != "profile" or np.any(rho <= 0):
        return rho, np.zeros(len(Y)), D
    combined = asr.build_combined_profiles(agents, xbar, rho, bounds, config, D)
    return rho, np.array([c.C for c in combined]), D


def _base(controllers):
    return tuple(c.base() for c in controllers)


def detect_synthesize(agents, g: Graph, base_controllers, y_star, seed=0, *, magnitude=1.0,
                      min_sep=1e-4, r_check=None, bounds=asr.DEFAULT_BOUNDS,
                      config=None) -> SynthesisBundle:
    """Nominal controllers plus a kernel bias separating the full graph from its faulty versions.

    The bias is checked against every subgraph with at most ``r_check``
    missing edges (all nonempty subgraphs when ``m <= 12``, else 2).
    """
    config = config or asr.AssertionConfig()
    k = vertex_connectivity(g)
    if k < 2:
        raise GraphError(f"fault detection needs a 2-connected graph (vertex connectivity {k})")
    y_star = np.asarray(y_star, dtype=float)
    base = _base(base_controllers)
    nom = synthesize_controllers(agents, g, base, y_star)
    if r_check is None:
        r_check = g.m - 1 if g.m <= 12 else min(2, g.m - 1)
    masks = np.array([h.array for h in enumerate_subgraphs(g, r_check)])
    w, sep = _kernel_for(nom, masks, 0, seed, magnitude, min_sep)
    mu = np.array([c.mu_star for c in nom.controllers])
    rho, C, D = _profile_data(nom.agents, y_star[None, :], bounds, config)
    return SynthesisBundle(
        "detect", g, tuple(agents), base, y_star, 0, masks[:1], mu[None, :], w[None, :],
        nom.feedforward[None, :], mu, nom.feedforward, ip_separation=np.array([sep]),
        stable_rho=rho[0], stable_C=float(C[0]), D=D, bounds=tuple(bounds), assertion=config,
        seed=int(seed),
        report={"vertex_connectivity": k, "checked_subgraphs": len(masks), "separation": sep,
                "C_stable": float(C[0])},
    )


def _exploration(nom, masks, seed, magnitude, min_sep, attempts=10):
    for k in range(attempts):
        w = sample_general(nom.m, _sub_seed(seed, 7, k), magnitude)
        res = validate_indication(nom, list(masks), w, min_sep)
        if res.passed:
            return w.w, res
        log.info("exploration bias rejected (separation %.3e)", res.min_separation)
    raise IndicationError(f"no general indication vector after {attempts} attempts")


def adversary_synthesize(agents, g: Graph, base_controllers, y_star, r: int, seed=0, *,
                         magnitude=1.0, min_sep=1e-4, bounds=asr.DEFAULT_BOUNDS,
                         config=None) -> SynthesisBundle:
    """Planner's strategy: shared general bias, limits under it, controllers per subgraph."""
    config = config or asr.AssertionConfig()
    if not 0 <= r < g.m:
        raise GraphError(f"need 0 <= r < m (r={r}, m={g.m})")
    y_star = np.asarray(y_star, dtype=float)
    base = _base(base_controllers)
    nom = synthesize_controllers(agents, g, base, y_star)
    masks = np.array([h.array for h in enumerate_subgraphs(g, r)])
    N = len(masks)
    if N > 1:
        w, res = _exploration(nom, masks, seed, magnitude, min_sep)
        limits, sep = res.outputs, res.min_separation
    else:
        w = np.zeros(g.m)
        limits, sep = y_star[None, :].copy(), float("inf")
    mu = np.zeros((N, g.m))
    v = np.zeros((N, g.n))
    flags = np.zeros(N, dtype=bool)
    for j in range(N):
        split = not is_connected(g, masks[j])
        try:
            net_j = synthesize_controllers(agents, g, base, y_star, mask=masks[j], per_component=split)
        except SynthesisError as exc:
            log.warning("subgraph %d: %s", j, exc)
            flags[j] = True
            net_j = synthesize_controllers(agents, g, base, y_star, mask=masks[j], per_component=True,
                                           verify=False)
        flags[j] |= split
        mu[j] = [c.mu_star for c in net_j.controllers]
        v[j] = net_j.feedforward
    rho_s, C_s, D = _profile_data(nom.agents, y_star[None, :], bounds, config)
    rho_e, C_e, D_e = _profile_data(nom.agents, limits, bounds, config)
    return SynthesisBundle(
        "adversary", g, tuple(agents), base, y_star, r, masks, mu, np.zeros((N, g.m)), v,
        np.array([c.mu_star for c in nom.controllers]), nom.feedforward, w, limits,
        ip_flags=flags, stable_rho=rho_s[0], stable_C=float(C_s[0]), explore_rho=rho_e,
        explore_C=C_e, D=max(D, D_e), bounds=tuple(bounds), assertion=config, seed=int(seed),
        report={"N": N, "bits": broadcast_bits(N), "separation": sep,
                "flagged_subgraphs": int(flags.sum())},
    )


def isolate_synthesize(agents, g: Graph, base_controllers, y_star, seed=0, *, magnitude=1.0,
                       kernel_magnitude=1.0, min_sep=1e-4, bounds=asr.DEFAULT_BOUNDS,
                       config=None) -> SynthesisBundle:
    """Per-subgraph kernel protocols plus the shared exploration bias, for ``r = k - 2`` faults."""
    config = config or asr.AssertionConfig()
    k = vertex_connectivity(g)
    if k < 3:
        raise GraphError(f"fault isolation needs a 3-connected graph (vertex connectivity {k})")
    r = k - 2
    y_star = np.asarray(y_star, dtype=float)
    base = _base(base_controllers)
    nom = synthesize_controllers(agents, g, base, y_star)
    masks = np.array([h.array for h in enumerate_subgraphs(g, r)])
    N = len(masks)
    w, res = _exploration(nom, masks, seed, magnitude, min_sep)
    mu = np.zeros((N, g.m))
    wb = np.zeros((N, g.m))
    v = np.zeros((N, g.n))
    seps = np.zeros(N)
    for j in range(N):
        net_j = synthesize_controllers(agents, g, base, y_star, mask=masks[j])
        wb[j], seps[j] = _kernel_for(net_j, masks, j, seed, kernel_magnitude, min_sep)
        mu[j] = [c.mu_star for c in net_j.controllers]
        v[j] = net_j.feedforward
    rho_s, C_s, D = _profile_data(nom.agents, y_star[None, :], bounds, config)
    rho_e, C_e, D_e = _profile_data(nom.agents, res.outputs, bounds, config)
    return SynthesisBundle(
        "isolate", g, tuple(agents), base, y_star, r, masks, mu, wb, v,
        np.array([c.mu_star for c in nom.controllers]), nom.feedforward, w, res.outputs,
        ip_separation=seps, stable_rho=rho_s[0], stable_C=float(C_s[0]), explore_rho=rho_e,
        explore_C=C_e, D=max(D, D_e), bounds=tuple(bounds), assertion=config, seed=int(seed),
        report={"N": N, "r": r, "vertex_connectivity": k,
                "exploration_separation": res.min_separation,
                "min_ip_separation": float(seps.min()), "C_stable": float(C_s[0]),
                "C_explore_min": float(np.min(C_e)) if len(C_e) else float("nan")},
    )


# -- runs --------------------------------------------------------------------

class _Loop:
    """Integrates tick by tick at the sample rate, applying faults on the grid."""

    def __init__(self, net, x0, span, dt, sample_rate, signal, initial_mask, flog, backend):
        self.K = _n_steps(span, dt)
        self.dt = dt
        self.stride = sample_stride(sample_rate, dt)
        self.stream_dt = self.stride * dt
        self.integ = Integrator(net, x0, dt, self.K, backend=backend)
        self.mask = np.asarray(initial_mask, dtype=float).copy()
        self.integ.set_mask(self.mask)
        self.faults = signal.step_events(dt)
        self.fi = 0
        self.flog = flog

    def ticks(self):
        integ = self.integ
        while integ.step < self.K:
            target = min(integ.step + self.stride, self.K)
            while self.fi < len(self.faults) and self.faults[self.fi][0] < target:
                s, e = self.faults[self.fi]
                integ.advance(max(0, s - integ.step))
                self.mask[e] = 0.0
                integ.set_mask(self.mask)
                self.flog.append(s * self.dt, "fault", edge=int(e))
                self.fi += 1
            integ.advance(target - integ.step)
            yield round(integ.step * self.dt, 9), integ.x


def _cert(bank, i):
    c = bank.certificates.get(int(i))
    return None if c is None else c.to_json()


def _summary(bundle, flog, traj, signal, true_mask):
    y = traj.y()
    dev = np.abs(y - bundle.y_star)
    out = {
        "terminal_error": float(np.max(dev[-1])),
        "max_deviation": float(np.max(dev)),
        "fault_declarations": flog.times("fault_declared"),
        "exploratory_starts": [e["t"] for e in flog.of_kind("phase_change") if e["to"] == "exploratory"],
        "identified": [e["index"] for e in flog.of_kind("graph_identified")],
        "true_index": bundle.index_of(np.flatnonzero(~true_mask)),
        "faults": [[t, e] for t, e in signal.events],
    }
    lat = []
    for tf, _ in signal.events:
        later = [t for t in out["fault_declarations"] if t > tf]
        lat.append(later[0] - tf if later else None)
    out["detection_latency"] = lat
    return out


def detect_run(bundle: SynthesisBundle, signal: SwitchingSignal, x0, span, dt=1e-3,
               sample_rate=10.0, method=None, backend=None) -> FdiResult:
    """Run the detection protocol; monitoring stops after the first declaration."""
    flog = FdiEventLog()
    loop = _Loop(bundle.ip_network(0), x0, span, dt, sample_rate, signal,
                 np.ones(bundle.graph.m), flog, backend)
    bank = bundle.stable_bank(0, loop.stream_dt, method)
    bank.start(0.0, np.asarray(x0, dtype=float))
    phase = FdiPhase("stable", j=0)
    for t, x in loop.ticks():
        if bank is not None and bank.feed(t, x).size:
            flog.append(t, "fault_declared", graph=0, certificate=_cert(bank, 0))
            phase = FdiPhase("declared", j=0)
            bank = None
    traj = loop.integ.trajectory()
    return FdiResult(flog, traj, phase, _summary(bundle, flog, traj, signal, loop.mask > 0))


def adversary_play(bundle: SynthesisBundle, removed_edges, x0, span, dt=1e-3, sample_rate=10.0,
                   method=None, backend=None) -> FdiResult:
    """Game run: edges are missing from t=0; identify, broadcast, switch controllers."""
    removed = sorted(set(int(e) for e in removed_edges))
    if len(removed) > bundle.r:
        log.warning("adversary removed %d edges, more than r=%d", len(removed), bundle.r)
    mask0 = np.ones(bundle.graph.m)
    mask0[removed] = 0.0
    flog = FdiEventLog()
    net0 = bundle.exploration_network() if bundle.N > 1 else bundle.ip_network(0)
    loop = _Loop(net0, x0, span, dt, sample_rate, SwitchingSignal(), mask0, flog, backend)
    phase = FdiPhase("exploratory", has_faulted=np.zeros(bundle.N, dtype=bool), round=1)
    if bundle.N == 1:
        flog.append(0.0, "broadcast", index=0, bits=0)
        bank = None
        phase = FdiPhase("stable", j=0)
    else:
        bank = bundle.exploration_bank(loop.stream_dt, method)
        bank.start(0.0, np.asarray(x0, dtype=float))
        flog.append(0.0, "phase_change", to="exploratory", round=1)
    for t, x in loop.ticks():
        if bank is None:
            continue
        bank.feed(t, x)
        phase.has_faulted = ~bank.alive
        alive = bank.survivors()
        if len(alive) == 1:
            j = int(alive[0])
            flog.append(t, "graph_identified", index=j, removed=list(bundle.removed[j]))
            flog.append(t, "broadcast", index=j, bits=bundle.bits)
            loop.integ.set_protocol(bundle.ip_network(j))
            flog.append(t, "protocol_switch", protocol="ip", index=j)
            phase = FdiPhase("stable", j=j)
            bank = None
        elif len(alive) == 0:
            flog.append(t, "protocol_error", reason="every instance declared")
            phase = FdiPhase("failed")
            bank = None
    traj = loop.integ.trajectory()
    return FdiResult(flog, traj, phase, _summary(bundle, flog, traj, SwitchingSignal(), mask0 > 0))


def isolate_run(bundle: SynthesisBundle, signal: SwitchingSignal, x0, span, dt=1e-3,
                sample_rate=10.0, method=None, backend=None, max_restarts=MAX_RESTARTS) -> FdiResult:
    """Stable/exploratory state machine for up to ``bundle.r`` permanent link faults."""
    flog = FdiEventLog()
    if len(signal) > bundle.r:
        log.warning("signal has %d faults, more than r=%d: isolation is not guaranteed",
                    len(signal), bundle.r)
        flog.append(0.0, "warning", reason="more faults than r")
    loop = _Loop(bundle.ip_network(0), x0, span, dt, sample_rate, signal,
                 np.ones(bundle.graph.m), flog, backend)
    phase = FdiPhase("stable", j=0)
    bank = bundle.stable_bank(0, loop.stream_dt, method)
    bank.start(0.0, np.asarray(x0, dtype=float))
    restarts = 0

    def explore(t, x, rnd, reason):
        nonlocal bank, phase
        bank = bundle.exploration_bank(loop.stream_dt, method)
        bank.start(t, x)
        phase = FdiPhase("exploratory", has_faulted=np.zeros(bundle.N, dtype=bool), round=rnd)
        flog.append(t, "phase_change", to="exploratory", round=rnd, reason=reason)

    for t, x in loop.ticks():
        declared = bank.feed(t, x)
        if phase.mode == "stable":
            if declared.size:
                flog.append(t, "fault_declared", graph=phase.j, certificate=_cert(bank, 0))
                loop.integ.set_protocol(bundle.exploration_network())
                flog.append(t, "protocol_switch", protocol="exploration")
                explore(t, x, 1, "fault declared")
            continue
        phase.has_faulted = ~bank.alive
        alive = bank.survivors()
        if len(alive) == 1:
            j = int(alive[0])
            flog.append(t, "graph_identified", index=j, removed=list(bundle.removed[j]))
            loop.integ.set_protocol(bundle.ip_network(j))
            flog.append(t, "protocol_switch", protocol="ip", index=j)
            bank = bundle.stable_bank(j, loop.stream_dt, method)
            bank.start(t, x)
            phase = FdiPhase("stable", j=j)
            flog.append(t, "phase_change", to="stable", index=j)
        elif len(alive) == 0:
            restarts += 1
            if restarts > max_restarts:
                flog.append(t, "protocol_error", reason=f"more than {max_restarts} restarts")
                raise ProtocolError(f"exploration restarted more than {max_restarts} times (t={t})")
            explore(t, x, phase.round + 1, "no survivor")
    traj = loop.integ.trajectory()
    return FdiResult(flog, traj, phase, _summary(bundle, flog, traj, signal, loop.mask > 0))
