"""Command-line front end.

    netfdi synth     --scenario FILE --out DIR [--mode M] [--seed N]
    netfdi run       --scenario FILE [--bundle FILE] --out DIR
    netfdi casestudy [--seed N] --out DIR
    netfdi graph     --graph FILE [--r R]

Errors are reported as one JSON object on stderr and mapped to exit codes
(0 ok, 2 validation, 3 synthesis, 4 divergence, 5 protocol).
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import assertion as asr
from . import scenario as sc
from .errors import NetFDIError, ScenarioError
from .fdi import SynthesisBundle
from .graph_core import cycle_space_basis, is_connected, subgraph_count, vertex_connectivity
from .simulator import write_trajectory_csv

log = logging.getLogger("netfdi")


def _threads() -> int:
    env = os.environ.get("NETFDI_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            raise ScenarioError(f"NETFDI_THREADS must be an integer, got {env!r}") from None
    return min(4, os.cpu_count() or 1)


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, float) and not np.isfinite(obj):
        return None
    return obj


def _dump(obj, path):
    with open(path, "w") as fh:
        json.dump(_jsonable(obj), fh, indent=2, sort_keys=True)
        fh.write("\n")


def synthesis_report(bundle: SynthesisBundle) -> dict:
    rep = dict(bundle.report)
    rep.update({
        "mode": bundle.mode, "N": bundle.N, "r": bundle.r, "broadcast_bits": bundle.bits,
        "n": bundle.graph.n, "m": bundle.graph.m, "expected_N": subgraph_count(bundle.graph.m, bundle.r),
        "C_stable": bundle.stable_C, "scenario_sha256": bundle.scenario_sha256,
        "omega_tables": [{"beta0": om.beta0, "s_max": om.s_max}
                         for om in asr._PROFILE_CACHE.values()],
    })
    if bundle.explore_C is not None and len(bundle.explore_C):
        C = np.asarray(bundle.explore_C)
        rep["C_explore"] = {"min": float(C.min()), "median": float(np.median(C)), "max": float(C.max())}
    return rep


def _synth(scn, out: Path) -> SynthesisBundle:
    bundle = sc.synthesize(scn)
    out.mkdir(parents=True, exist_ok=True)
    bundle.save(out / "bundle.json")
    _dump(synthesis_report(bundle), out / "synthesis_report.json")
    return bundle


def _write_run(res, out: Path):
    out.mkdir(parents=True, exist_ok=True)
    write_trajectory_csv(res.trajectory, out / "trajectory.csv")
    res.log.to_jsonl(out / "events.jsonl")
    _dump(res.summary, out / "summary.json")


def cmd_synth(args) -> int:
    scn = sc.load_scenario(args.scenario, args.seed, args.mode)
    bundle = _synth(scn, Path(args.out))
    print(json.dumps({"bundle": str(Path(args.out) / "bundle.json"), "N": bundle.N}))
    return 0


def cmd_run(args) -> int:
    scn = sc.load_scenario(args.scenario, args.seed, args.mode)
    out = Path(args.out)
    bundle = SynthesisBundle.load(args.bundle) if args.bundle else _synth(scn, out)
    res = sc.run(scn, bundle)
    _write_run(res, out)
    print(json.dumps(_jsonable({"terminal_error": res.summary["terminal_error"],
                                "fault_declarations": res.summary["fault_declarations"]})))
    return 0


def _casestudy_worker(job):
    obj, bundle_path, out = job
    scn = sc.resolve(obj)
    res = sc.run(scn, SynthesisBundle.load(bundle_path))
    _write_run(res, Path(out))
    return res.summary


def cmd_casestudy(args) -> int:
    out = Path(args.out)
    objs = sc.casestudy_scenarios(args.seed if args.seed is not None else 0, args.span)
    scns = [sc.resolve(o) for o in objs]
    bundle = _synth(scns[0], out)
    jobs = [(o, str(out / "bundle.json"), str(out / s.name)) for o, s in zip(objs, scns)]
    workers = min(_threads(), len(jobs))
    if workers > 1:
        with ProcessPoolExecutor(workers) as ex:
            summaries = list(ex.map(_casestudy_worker, jobs))
    else:
        summaries = [_casestudy_worker(j) for j in jobs]
    table = {"N": bundle.N, "seed": scns[0].seeds["w"], "scenarios": summaries,
             "all_converged": all(s["terminal_error"] <= 1.0 for s in summaries)}
    _dump(table, out / "casestudy_summary.json")
    for s in summaries:
        print(f"{s['scenario']}: terminal_error={s['terminal_error']:.3e} "
              f"declarations={s['fault_declarations']} identified={s['identified']}")
    return 0


def graph_report(g, r_max: int = 2) -> dict:
    basis = cycle_space_basis(g, allow_disconnected=True)
    return {
        "n": g.n, "m": g.m, "connected": is_connected(g),
        "vertex_connectivity": vertex_connectivity(g),
        "cycle_rank": len(basis),
        "cycle_basis": [[[int(e), int(c[e])] for e in np.flatnonzero(c)] for c in basis],
        "subgraph_counts": {r: subgraph_count(g.m, r) for r in range(min(r_max, g.m - 1) + 1)},
    }


def cmd_graph(args) -> int:
    if args.graph:
        with open(args.graph) as fh:
            g = sc.build_graph(json.load(fh))
    elif args.scenario:
        g = sc.load_scenario(args.scenario).graph
    else:
        raise ScenarioError("graph needs --graph or --scenario")
    rep = graph_report(g, args.r)
    if args.out:
        Path(args.out).mkdir(parents=True, exist_ok=True)
        _dump(rep, Path(args.out) / "graph_report.json")
    print(json.dumps(_jsonable(rep)))
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="netfdi", description="Network fault detection and isolation.")
    p.add_argument("-v", "--verbose", action="count", default=0)
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, scenario_required=True):
        sp.add_argument("--scenario", required=scenario_required, help="scenario JSON file")
        sp.add_argument("--out", default="out", help="output directory")
        sp.add_argument("--seed", type=int, default=None, help="override all scenario seeds")
        sp.add_argument("--mode", choices=sc.MODES, default=None)

    sp = sub.add_parser("synth", help="synthesise controllers, biases and profiles")
    common(sp)
    sp.set_defaults(func=cmd_synth)

    sp = sub.add_parser("run", help="simulate a scenario under its FDI protocol")
    common(sp)
    sp.add_argument("--bundle", default=None, help="bundle JSON from 'synth'")
    sp.set_defaults(func=cmd_run)

    sp = sub.add_parser("casestudy", help="run the four velocity-coordination scenarios")
    sp.add_argument("--out", default="casestudy")
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--span", type=float, default=100.0)
    sp.set_defaults(func=cmd_casestudy)

    sp = sub.add_parser("graph", help="connectivity, cycle basis and subgraph counts")
    sp.add_argument("--graph", default=None, help="graph JSON ({n, edges} or {family, ...})")
    sp.add_argument("--scenario", default=None)
    sp.add_argument("--out", default=None)
    sp.add_argument("--r", type=int, default=2, help="largest number of missing edges to count")
    sp.set_defaults(func=cmd_graph)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except NetFDIError as exc:
        err = {"error": type(exc).__name__, "message": str(exc), "exit_code": exc.exit_code}
        if getattr(exc, "time", None) is not None:
            err["time"] = exc.time
        print(json.dumps(err), file=sys.stderr)
        return exc.exit_code
    except (OSError, json.JSONDecodeError) as exc:
        print(json.dumps({"error": type(exc).__name__, "message": str(exc), "exit_code": 2}),
              file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
