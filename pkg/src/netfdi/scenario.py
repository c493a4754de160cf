"""Scenario files: schema validation, seeded materialisation and dispatch.

A scenario is a JSON object; random parts (agent parameters, initial
state) are drawn from explicit seeds when the file is resolved, so the
resolved scenario fully determines a run.

Example::

    {"name": "demo", "mode": "isolate",
     "graph": {"family": "circulant", "n": 20, "steps": [1, 2]},
     "agents": {"type": "vehicle_drag", "C_loguniform": [0.01, 0.1]},
     "controllers": {"type": "tanh"},
     "y_star": [...], "faults": [{"t": 20.0, "edge": [1, 2]}],
     "x0": {"normal": [70, 20]}, "seeds": {"w": 0, "x0": 1, "agents": 2},
     "span": 100, "dt": 0.001, "sample_rate": 10,
     "assertion": {"method": "profile"}}
"""
from __future__ import annotations

import copy
import hashlib
import json
from dataclasses import dataclass, field

import numpy as np

from . import fdi
from .assertion import DEFAULT_BOUNDS, AssertionConfig
from .dynamics import agent_from_spec, controller_from_spec
from .errors import ScenarioError
from .graph_core import (Graph, circulant_graph, complete_graph, cycle_graph, path_graph,
                         petersen_graph, wheel_with_chords)
from .simulator import SwitchingSignal

__all__ = ["Scenario", "resolve", "load_scenario", "build_graph", "casestudy_scenarios",
           "synthesize", "run", "CASE_Y_STAR"]

MODES = ("detect", "adversary", "isolate")
CASE_Y_STAR = [60.0] * 7 + [70.0] * 6 + [50.0] * 7
# the two links that fail in the case study, 0-based
CASE_EDGES = ([1, 2], [12, 13])

_FAMILIES = {
    "complete": lambda o: complete_graph(int(o["n"])),
    "cycle": lambda o: cycle_graph(int(o["n"])),
    "path": lambda o: path_graph(int(o["n"])),
    "circulant": lambda o: circulant_graph(int(o["n"]), tuple(o.get("steps", (1, 2)))),
    "petersen": lambda o: petersen_graph(),
    "wheel_with_chords": lambda o: wheel_with_chords(),
}

_SYNTH_KEYS = ("mode", "graph", "agents", "controllers", "y_star", "r", "bounds", "indication",
               "assertion", "seeds_w")


def build_graph(obj) -> Graph:
    if isinstance(obj, str):
        obj = {"family": obj}
    if "family" in obj:
        try:
            return _FAMILIES[obj["family"]](obj)
        except KeyError as exc:
            raise ScenarioError(f"unknown graph family or missing field: {exc}") from None
    return Graph.from_json(obj)


def _edge_index(g: Graph, ref) -> int:
    if isinstance(ref, (list, tuple)):
        return g.find_edge(int(ref[0]), int(ref[1]))
    e = int(ref)
    if not 0 <= e < g.m:
        raise ScenarioError(f"edge index {e} out of range")
    return e


def _canonical(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


@dataclass
class Scenario:
    name: str
    mode: str
    graph: Graph
    agents: tuple
    controllers: tuple
    y_star: np.ndarray
    r: int
    signal: SwitchingSignal
    removed_edges: tuple
    assertion: AssertionConfig
    span: float
    dt: float
    sample_rate: float
    x0: np.ndarray
    seeds: dict
    bounds: tuple
    indication: dict
    resolved: dict = field(repr=False, default_factory=dict)

    @property
    def sha256(self) -> str:
        return hashlib.sha256(_canonical(self.resolved).encode()).hexdigest()

    @property
    def synthesis_sha256(self) -> str:
        """Hash of the fields that determine the synthesis bundle."""
        sub = {k: self.resolved.get(k) for k in _SYNTH_KEYS}
        sub["seeds_w"] = self.seeds.get("w")
        return hashlib.sha256(_canonical(sub).encode()).hexdigest()


def _agents(spec, n, seed):
    if isinstance(spec, list):
        if len(spec) != n:
            raise ScenarioError(f"{len(spec)} agent specs for {n} vertices")
        return [dict(a) for a in spec]
    spec = dict(spec)
    rng = np.random.default_rng(seed)
    if "C_loguniform" in spec:
        lo, hi = spec.pop("C_loguniform")
        vals = np.exp(rng.uniform(np.log(lo), np.log(hi), n))
        return [dict(spec, C=float(c)) for c in vals]
    if "a_uniform" in spec:
        lo, hi = spec.pop("a_uniform")
        return [dict(spec, a=float(a)) for a in rng.uniform(lo, hi, n)]
    return [dict(spec) for _ in range(n)]


def _x0(spec, n, seed, y_star):
    if spec is None:
        return [float(v) for v in y_star]
    if isinstance(spec, list):
        if len(spec) != n:
            raise ScenarioError("x0 has the wrong length")
        return [float(v) for v in spec]
    rng = np.random.default_rng(seed)
    if "normal" in spec:
        mean, sd = spec["normal"]
        return [float(v) for v in rng.normal(mean, sd, n)]
    if "around_target" in spec:
        return [float(v) for v in np.asarray(y_star) + rng.normal(0.0, spec["around_target"], n)]
    raise ScenarioError(f"unsupported x0 spec {spec!r}")


def resolve(obj, seed=None, mode=None) -> Scenario:
    """Validate a scenario object and draw its random parts from the seeds."""
    if not isinstance(obj, dict):
        raise ScenarioError("scenario must be a JSON object")
    obj = copy.deepcopy(obj)
    seeds = {"w": 0, "x0": 1, "agents": 2}
    seeds.update(obj.get("seeds", {}))
    if seed is not None:
        seeds = {"w": int(seed), "x0": int(seed) + 1, "agents": int(seed) + 2}
    mode = mode or obj.get("mode", "isolate")
    if mode not in MODES:
        raise ScenarioError(f"mode must be one of {MODES}")
    for key in ("graph", "agents", "y_star"):
        if key not in obj:
            raise ScenarioError(f"scenario is missing {key!r}")
    g = build_graph(obj["graph"])
    agent_specs = _agents(obj["agents"], g.n, seeds["agents"])
    ctrl = obj.get("controllers", {"type": "tanh"})
    ctrl_specs = [dict(c) for c in ctrl] if isinstance(ctrl, list) else [dict(ctrl)] * g.m
    if len(ctrl_specs) != g.m:
        raise ScenarioError(f"{len(ctrl_specs)} controller specs for {g.m} edges")
    y_star = [float(v) for v in obj["y_star"]]
    if len(y_star) != g.n:
        raise ScenarioError("y_star has the wrong length")
    faults = [{"t": float(f["t"]), "edge": _edge_index(g, f["edge"])} for f in obj.get("faults", [])]
    removed = sorted(_edge_index(g, e) for e in obj.get("removed_edges", []))
    span, dt = float(obj.get("span", 100.0)), float(obj.get("dt", 1e-3))
    rate = float(obj.get("sample_rate", 10.0))
    if span <= 0 or dt <= 0 or rate <= 0:
        raise ScenarioError("span, dt and sample_rate must be positive")
    x0 = _x0(obj.get("x0"), g.n, seeds["x0"], y_star)
    bounds = [float(b) for b in obj.get("bounds", DEFAULT_BOUNDS)]
    indication = {"magnitude": 1.0, "kernel_magnitude": 1.0, "min_sep": 1e-4}
    indication.update(obj.get("indication", {}))
    assertion = AssertionConfig.from_json(obj.get("assertion", {}))
    r = int(obj.get("r", 1 if mode == "adversary" else 0))
    resolved = {
        "name": obj.get("name", "scenario"), "mode": mode, "graph": g.to_json(),
        "agents": agent_specs, "controllers": ctrl_specs, "y_star": y_star, "r": r,
        "faults": faults, "removed_edges": removed, "assertion": assertion.to_json(),
        "span": span, "dt": dt, "sample_rate": rate, "x0": x0, "seeds": seeds,
        "bounds": bounds, "indication": indication,
    }
    try:
        signal = SwitchingSignal.from_json(faults)
    except ValueError as exc:
        raise ScenarioError(str(exc)) from None
    return Scenario(
        resolved["name"], mode, g, tuple(agent_from_spec(a) for a in agent_specs),
        tuple(controller_from_spec(c) for c in ctrl_specs), np.array(y_star), r, signal,
        tuple(removed), assertion, span, dt, rate, np.array(x0), seeds, tuple(bounds), indication,
        resolved,
    )


def load_scenario(path, seed=None, mode=None) -> Scenario:
    try:
        with open(path) as fh:
            obj = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ScenarioError(f"{path}: {exc}") from None
    return resolve(obj, seed, mode)


def casestudy_scenarios(seed: int = 0, span: float = 100.0) -> list:
    """The four velocity-coordination scenarios (faultless, far faults, close faults, early faults)."""
    base = {
        "mode": "isolate",
        "graph": {"family": "circulant", "n": 20, "steps": [1, 2]},
        "agents": {"type": "vehicle_drag", "C_loguniform": [0.01, 0.1]},
        "controllers": {"type": "tanh"},
        "y_star": CASE_Y_STAR,
        "x0": {"normal": [70.0, 20.0]},
        "seeds": {"w": seed, "x0": seed + 1, "agents": seed + 2},
        "span": span, "dt": 1e-3, "sample_rate": 10.0,
        "assertion": {"method": "profile", "seed": seed},
    }
    a, b = CASE_EDGES
    fault_sets = {
        "scenario1_faultless": [],
        "scenario2_far_faults": [{"t": 20.0, "edge": a}, {"t": 50.0, "edge": b}],
        "scenario3_close_faults": [{"t": 20.0, "edge": a}, {"t": 21.0, "edge": b}],
        "scenario4_early_faults": [{"t": 0.5, "edge": a}, {"t": 4.0, "edge": b}],
    }
    return [dict(base, name=name, faults=f) for name, f in fault_sets.items()]


def synthesize(scn: Scenario) -> "fdi.SynthesisBundle":
    ind = scn.indication
    common = dict(bounds=scn.bounds, config=scn.assertion)
    if scn.mode == "detect":
        b = fdi.detect_synthesize(scn.agents, scn.graph, scn.controllers, scn.y_star, scn.seeds["w"],
                                  magnitude=ind["kernel_magnitude"], min_sep=ind["min_sep"], **common)
    elif scn.mode == "adversary":
        b = fdi.adversary_synthesize(scn.agents, scn.graph, scn.controllers, scn.y_star, scn.r,
                                     scn.seeds["w"], magnitude=ind["magnitude"],
                                     min_sep=ind["min_sep"], **common)
    else:
        b = fdi.isolate_synthesize(scn.agents, scn.graph, scn.controllers, scn.y_star, scn.seeds["w"],
                                   magnitude=ind["magnitude"], kernel_magnitude=ind["kernel_magnitude"],
                                   min_sep=ind["min_sep"], **common)
    b.scenario_sha256 = scn.synthesis_sha256
    return b


def run(scn: Scenario, bundle=None, backend=None) -> "fdi.FdiResult":
    if bundle is None:
        bundle = synthesize(scn)
    elif bundle.scenario_sha256 and bundle.scenario_sha256 != scn.synthesis_sha256:
        raise ScenarioError("bundle was synthesised for a different scenario")
    kw = dict(dt=scn.dt, sample_rate=scn.sample_rate, backend=backend)
    if scn.mode == "detect":
        res = fdi.detect_run(bundle, scn.signal, scn.x0, scn.span, **kw)
    elif scn.mode == "adversary":
        res = fdi.adversary_play(bundle, scn.removed_edges, scn.x0, scn.span, **kw)
    else:
        res = fdi.isolate_run(bundle, scn.signal, scn.x0, scn.span, **kw)
    res.summary.update({"scenario": scn.resolved["name"], "scenario_sha256": scn.sha256,
                        "mode": scn.mode, "N": bundle.N,
                        "timeline": [dict(e) for e in res.log.of_kind("phase_change")]})
    return res
