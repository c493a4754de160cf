"""Compare the compiled and numpy kernel backends on the closed-loop integrator.

    python3 benchmarks/bench_kernels.py --steps 20000 --repeat 3
"""
import argparse
import json
import time

import numpy as np

from netfdi import kernels
from netfdi.dynamics import tanh_controller, vehicle_drag
from netfdi.graph_core import circulant_graph
from netfdi.scenario import CASE_Y_STAR
from netfdi.steady_state import synthesize_controllers


def case_network(seed=0):
    rng = np.random.default_rng(seed)
    g = circulant_graph(20, (1, 2))
    agents = [vehicle_drag(float(c)) for c in np.exp(rng.uniform(np.log(0.01), np.log(0.1), g.n))]
    net = synthesize_controllers(agents, g, [tanh_controller()] * g.m, np.array(CASE_Y_STAR))
    x0 = rng.normal(70.0, 20.0, g.n)
    return net, x0


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--steps", type=int, default=20000)
    ap.add_argument("--repeat", type=int, default=3)
    ap.add_argument("--dt", type=float, default=1e-3)
    args = ap.parse_args(argv)

    net, x0 = case_network()
    params = kernels.pack(net)
    mask = np.ones(net.m)
    backends = ["python"]
    try:
        kernels.backend_module("cython")
        backends.insert(0, "cython")
    except ImportError:
        print("compiled extension not built; timing the numpy backend only")

    rows, finals = {}, {}
    for b in backends:
        run = lambda: kernels.integrate_chunk(params, mask, x0, args.dt, args.steps, backend=b)
        run()
        sec = best_of(run, args.repeat)
        finals[b] = run()[0][-1]
        rows[b] = {"seconds": sec, "steps_per_second": args.steps / sec}
    if len(finals) == 2:
        rows["max_abs_diff"] = float(np.max(np.abs(finals["cython"] - finals["python"])))
        rows["speedup"] = rows["python"]["seconds"] / rows["cython"]["seconds"]
    print(json.dumps(rows, indent=2))


if __name__ == "__main__":
    main()
