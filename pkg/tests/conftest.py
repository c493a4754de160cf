import numpy as np
import pytest

from netfdi import scenario as sc
from netfdi.dynamics import linear_controller, linear_leak, tanh_controller, vehicle_drag
from netfdi.graph_core import Graph, is_connected
from netfdi.steady_state import synthesize_controllers

SMALL_BOUNDS = (-50.0, 50.0)


def random_connected_graph(rng, n_lo=3, n_hi=5, p=0.6) -> Graph:
    while True:
        n = int(rng.integers(n_lo, n_hi + 1))
        edges = [(i, j) for i in range(n) for j in range(i + 1, n) if rng.random() < p]
        g = Graph(n, tuple(edges))
        if g.m >= n - 1 and is_connected(g):
            return g


def random_network(seed, n_hi=5):
    """Small mixed network: drag or leaky agents, tanh or linear controllers.

    Returns ``(net, y_star, x0, fault_edge)``.
    """
    rng = np.random.default_rng(seed)
    g = random_connected_graph(rng, 3, n_hi)
    agents = [vehicle_drag(rng.uniform(0.5, 2.0)) if rng.random() < 0.5 else linear_leak(rng.uniform(0.5, 2.0))
              for _ in range(g.n)]
    ctrl = [tanh_controller() if rng.random() < 0.5 else linear_controller(rng.uniform(0.5, 2.0))
            for _ in range(g.m)]
    y_star = rng.uniform(-2.0, 2.0, g.n)
    net = synthesize_controllers(agents, g, ctrl, y_star)
    x0 = net.astack.h_inv(y_star) + rng.normal(0.0, 0.5, g.n)
    return net, y_star, x0, int(rng.integers(g.m))


class CaseStudy:
    """The four velocity-coordination scenarios sharing one synthesis bundle."""

    def __init__(self, seed=0):
        self.scenarios = [sc.resolve(o) for o in sc.casestudy_scenarios(seed)]
        self.bundle = sc.synthesize(self.scenarios[0])
        self.results = {s.name: sc.run(s, self.bundle) for s in self.scenarios}


@pytest.fixture(scope="session")
def casestudy():
    return CaseStudy(0)
