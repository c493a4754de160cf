"""Graphs, incidence matrices, cycle spaces, vertex connectivity and fault subgraphs.

Everything here works in integer arithmetic. A :class:`Graph` is an
undirected simple graph whose edges carry a fixed, arbitrary orientation
``(i, j)``; the orientation only fixes signs in the incidence matrix.
"""
from __future__ import annotations

import itertools
import json
from collections import deque
from dataclasses import dataclass
from functools import cached_property
from math import comb

import numpy as np

from .errors import GraphError

__all__ = [
    "Graph",
    "SubgraphMask",
    "incidence_matrix",
    "projection",
    "cycle_space_basis",
    "vertex_connectivity",
    "local_vertex_connectivity",
    "enumerate_subgraphs",
    "subgraph_count",
    "connected_components",
    "is_connected",
    "load_graph",
    "complete_graph",
    "cycle_graph",
    "path_graph",
    "circulant_graph",
    "petersen_graph",
    "wheel_with_chords",
]


@dataclass(frozen=True)
class Graph:
    """Undirected simple graph with oriented, ordered edges.

    Parameters
    ----------
    n_vertices : int
        Number of vertices, labelled ``0..n-1``.
    edges : tuple of (int, int)
        Oriented edges. Position in the tuple is the edge index.
    """

    n_vertices: int
    edges: tuple

    def __post_init__(self):
        edges = tuple((int(i), int(j)) for i, j in self.edges)
        object.__setattr__(self, "edges", edges)
        n = int(self.n_vertices)
        object.__setattr__(self, "n_vertices", n)
        if n < 1:
            raise GraphError("a graph needs at least one vertex")
        seen = set()
        for i, j in edges:
            if i == j:
                raise GraphError(f"self-loop at vertex {i}")
            if not (0 <= i < n and 0 <= j < n):
                raise GraphError(f"edge ({i}, {j}) out of range for n={n}")
            key = (min(i, j), max(i, j))
            if key in seen:
                raise GraphError(f"duplicate edge {{{i}, {j}}}")
            seen.add(key)

    @property
    def n(self) -> int:
        return self.n_vertices

    @property
    def m(self) -> int:
        return len(self.edges)

    @cached_property
    def adjacency(self) -> tuple:
        adj = [[] for _ in range(self.n)]
        for e, (i, j) in enumerate(self.edges):
            adj[i].append((j, e))
            adj[j].append((i, e))
        return tuple(tuple(a) for a in adj)

    @cached_property
    def edge_index(self) -> dict:
        """Map from unordered vertex pair to edge index."""
        return {frozenset(e): k for k, e in enumerate(self.edges)}

    def find_edge(self, i: int, j: int) -> int:
        try:
            return self.edge_index[frozenset((i, j))]
        except KeyError:
            raise GraphError(f"no edge between {i} and {j}") from None

    def degree(self) -> np.ndarray:
        return np.array([len(a) for a in self.adjacency], dtype=np.int64)

    def full_mask(self) -> "SubgraphMask":
        return SubgraphMask(self, (True,) * self.m)

    def mask_without(self, removed) -> "SubgraphMask":
        removed = set(int(e) for e in removed)
        return SubgraphMask(self, tuple(e not in removed for e in range(self.m)))

    def reoriented(self, flip) -> "Graph":
        """Copy of the graph with the orientation of edges in ``flip`` reversed."""
        flip = set(flip)
        return Graph(self.n, tuple((j, i) if k in flip else (i, j)
                                   for k, (i, j) in enumerate(self.edges)))

    def to_json(self) -> dict:
        return {"n": self.n, "edges": [list(e) for e in self.edges]}

    @classmethod
    def from_json(cls, obj) -> "Graph":
        try:
            return cls(int(obj["n"]), tuple(tuple(e) for e in obj["edges"]))
        except (KeyError, TypeError) as exc:
            raise GraphError(f"malformed graph object: {exc}") from None


@dataclass(frozen=True)
class SubgraphMask:
    """A nonempty spanning subgraph of ``parent`` given by its present edges."""

    parent: Graph
    present: tuple

    def __post_init__(self):
        present = tuple(bool(p) for p in self.present)
        if len(present) != self.parent.m:
            raise GraphError("mask length does not match the edge count")
        if not any(present):
            raise GraphError("empty subgraph (no edges present)")
        object.__setattr__(self, "present", present)

    @cached_property
    def array(self) -> np.ndarray:
        a = np.array(self.present, dtype=bool)
        a.setflags(write=False)
        return a

    @property
    def edges(self) -> tuple:
        return tuple(e for e, p in enumerate(self.present) if p)

    @property
    def removed(self) -> tuple:
        return tuple(e for e, p in enumerate(self.present) if not p)

    @property
    def n_present(self) -> int:
        return sum(self.present)

    def is_subgraph_of(self, other: "SubgraphMask") -> bool:
        return all(b or not a for a, b in zip(self.present, other.present))

    def without(self, edge: int) -> "SubgraphMask":
        p = list(self.present)
        p[edge] = False
        return SubgraphMask(self.parent, tuple(p))


def incidence_matrix(g: Graph) -> np.ndarray:
    """Node-by-edge incidence matrix: column ``e=(i,j)`` is ``+1`` at i, ``-1`` at j."""
    E = np.zeros((g.n, g.m), dtype=np.int64)
    for e, (i, j) in enumerate(g.edges):
        E[i, e] = 1
        E[j, e] = -1
    return E


def projection(h: SubgraphMask) -> np.ndarray:
    """Rows of the m-by-m identity for the edges present in ``h``."""
    m = h.parent.m
    return np.eye(m, dtype=np.int64)[list(h.edges)]


def connected_components(g: Graph, mask=None) -> list:
    """Vertex sets of the connected components, optionally over a mask's edges."""
    present = None if mask is None else (mask.present if isinstance(mask, SubgraphMask) else mask)
    seen = [False] * g.n
    comps = []
    for s in range(g.n):
        if seen[s]:
            continue
        comp = [s]
        seen[s] = True
        queue = deque([s])
        while queue:
            u = queue.popleft()
            for v, e in g.adjacency[u]:
                if present is not None and not present[e]:
                    continue
                if not seen[v]:
                    seen[v] = True
                    comp.append(v)
                    queue.append(v)
        comps.append(sorted(comp))
    return comps


def is_connected(g: Graph, mask=None) -> bool:
    return len(connected_components(g, mask)) == 1


def _bfs_tree(g: Graph, root=0):
    """BFS spanning forest (one tree per component, the first rooted at ``root``)."""
    parent = [-1] * g.n
    parent_edge = [-1] * g.n
    depth = [-1] * g.n
    for r in [root] + list(range(g.n)):
        if depth[r] >= 0:
            continue
        depth[r] = 0
        _bfs_grow(g, r, parent, parent_edge, depth)
    return parent, parent_edge, depth


def _bfs_grow(g, root, parent, parent_edge, depth):
    queue = deque([root])
    while queue:
        u = queue.popleft()
        for v, e in g.adjacency[u]:
            if depth[v] < 0:
                depth[v] = depth[u] + 1
                parent[v] = u
                parent_edge[v] = e
                queue.append(v)


def cycle_space_basis(g: Graph, allow_disconnected=False) -> list:
    """Fundamental-cycle basis of ker(E) with respect to a BFS spanning tree.

    Each basis vector is a signed integer edge indicator of one simple
    cycle: the chord with coefficient +1 and the tree path closing it,
    signed so that the incidence matrix annihilates it.

    Raises
    ------
    GraphError
        If the graph is disconnected and ``allow_disconnected`` is false.
        With ``allow_disconnected`` a spanning forest is used instead.
    """
    if not allow_disconnected and not is_connected(g):
        raise GraphError("cycle_space_basis requires a connected graph")
    parent, parent_edge, depth = _bfs_tree(g)
    tree_edges = {e for e in parent_edge if e >= 0}
    basis = []
    for e, (a, b) in enumerate(g.edges):
        if e in tree_edges:
            continue
        vec = np.zeros(g.m, dtype=np.int64)
        vec[e] = 1
        # route one unit of flow b -> a through the tree
        up_b, up_a = [], []
        u, w = b, a
        while depth[u] > depth[w]:
            up_b.append(u)
            u = parent[u]
        while depth[w] > depth[u]:
            up_a.append(w)
            w = parent[w]
        while u != w:
            up_b.append(u)
            up_a.append(w)
            u, w = parent[u], parent[w]
        for x in up_b:  # x -> parent[x]
            k = parent_edge[x]
            vec[k] += 1 if g.edges[k] == (x, parent[x]) else -1
        for x in up_a:  # parent[x] -> x
            k = parent_edge[x]
            vec[k] += 1 if g.edges[k] == (parent[x], x) else -1
        basis.append(vec)
    return basis


def local_vertex_connectivity(g: Graph, s: int, t: int) -> int:
    """Maximum number of internally vertex-disjoint s-t paths (s, t non-adjacent).

    Unit-capacity max-flow on the vertex-split digraph: vertex v becomes
    ``v_in -> v_out`` with capacity one, except for s and t.
    """
    n = g.n
    big = n + 1
    # residual capacities in a dict-of-dicts over 2n split nodes
    cap = [dict() for _ in range(2 * n)]

    def add(u, v, c):
        cap[u][v] = cap[u].get(v, 0) + c
        cap[v].setdefault(u, 0)

    for v in range(n):
        add(2 * v, 2 * v + 1, big if v in (s, t) else 1)
    for i, j in g.edges:
        add(2 * i + 1, 2 * j, big)
        add(2 * j + 1, 2 * i, big)
    source, sink = 2 * s + 1, 2 * t
    flow = 0
    while True:
        prev = {source: None}
        queue = deque([source])
        while queue and sink not in prev:
            u = queue.popleft()
            for v, c in cap[u].items():
                if c > 0 and v not in prev:
                    prev[v] = u
                    queue.append(v)
        if sink not in prev:
            return flow
        v = sink
        while prev[v] is not None:
            u = prev[v]
            cap[u][v] -= 1
            cap[v][u] += 1
            v = u
        flow += 1


def vertex_connectivity(g: Graph) -> int:
    """Largest k such that ``g`` is k-connected (0 if disconnected).

    Complete graphs return ``n - 1``. Otherwise the minimum local
    connectivity over non-adjacent pairs, capped by the minimum degree.
    """
    n = g.n
    if n < 2 or not is_connected(g):
        return 0
    if g.m == n * (n - 1) // 2:
        return n - 1
    best = int(g.degree().min())
    adjacent = {frozenset(e) for e in g.edges}
    for s, t in itertools.combinations(range(n), 2):
        if frozenset((s, t)) in adjacent:
            continue
        best = min(best, local_vertex_connectivity(g, s, t))
        if best == 0:
            break
    return best


def subgraph_count(m: int, r: int) -> int:
    return sum(comb(m, ell) for ell in range(r + 1))


def enumerate_subgraphs(g: Graph, r: int) -> list:
    """All subgraphs with at most ``r`` edges removed.

    Ordered by number of removed edges, then lexicographically on the
    removed-edge index tuple. Index 0 is the full graph.
    """
    if r < 0 or r >= g.m:
        raise GraphError(f"need 0 <= r < m (got r={r}, m={g.m})")
    out = []
    for ell in range(r + 1):
        for removed in itertools.combinations(range(g.m), ell):
            out.append(g.mask_without(removed))
    return out


def load_graph(path) -> Graph:
    with open(path) as fh:
        return Graph.from_json(json.load(fh))


# -- named graphs ----------------------------------------------------------

def complete_graph(n: int) -> Graph:
    return Graph(n, tuple(itertools.combinations(range(n), 2)))


def cycle_graph(n: int) -> Graph:
    return Graph(n, tuple((i, (i + 1) % n) for i in range(n)))


def path_graph(n: int) -> Graph:
    return Graph(n, tuple((i, i + 1) for i in range(n - 1)))


def circulant_graph(n: int, steps=(1, 2)) -> Graph:
    """Circulant graph C_n(steps); step-1 edges first, then step-2, etc."""
    edges = []
    for s in steps:
        for i in range(n):
            edges.append((i, (i + s) % n))
    return Graph(n, tuple(edges))


def petersen_graph() -> Graph:
    outer = [(i, (i + 1) % 5) for i in range(5)]
    spokes = [(i, i + 5) for i in range(5)]
    inner = [(5 + i, 5 + (i + 2) % 5) for i in range(5)]
    return Graph(10, tuple(outer + spokes + inner))


def wheel_with_chords() -> Graph:
    """Hub 0 joined to a 5-cycle 1..5, plus rim chords {1,3} and {2,5}."""
    spokes = [(0, i) for i in range(1, 6)]
    rim = [(i, i % 5 + 1) for i in range(1, 6)]
    return Graph(6, tuple(spokes + rim + [(1, 3), (2, 5)]))
