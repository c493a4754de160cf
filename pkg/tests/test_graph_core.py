import itertools
import json

import networkx as nx
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from netfdi.errors import GraphError
from netfdi.graph_core import (Graph, SubgraphMask, circulant_graph, complete_graph, connected_components,
                               cycle_graph, cycle_space_basis, enumerate_subgraphs, incidence_matrix,
                               is_connected, load_graph, path_graph, petersen_graph, projection,
                               subgraph_count, vertex_connectivity, wheel_with_chords)


@st.composite
def graphs(draw, n_max=8):
    n = draw(st.integers(2, n_max))
    pairs = list(itertools.combinations(range(n), 2))
    chosen = draw(st.lists(st.sampled_from(pairs), min_size=1, unique=True))
    flips = draw(st.lists(st.booleans(), min_size=len(chosen), max_size=len(chosen)))
    return Graph(n, tuple((j, i) if f else (i, j) for (i, j), f in zip(chosen, flips)))


def to_nx(g):
    G = nx.Graph()
    G.add_nodes_from(range(g.n))
    G.add_edges_from(g.edges)
    return G


def test_single_edge_column():
    E = incidence_matrix(Graph(2, ((0, 1),)))
    assert E[:, 0].tolist() == [1, -1]


def test_triangle_incidence():
    E = incidence_matrix(Graph(3, ((0, 1), (1, 2), (0, 2))))
    assert E.shape == (3, 3)
    assert np.all(E.sum(axis=0) == 0)
    assert np.linalg.matrix_rank(E) == 2


def test_circulant_incidence_rank():
    g = circulant_graph(20, (1, 2))
    E = incidence_matrix(g)
    assert E.shape == (20, 40)
    assert np.linalg.matrix_rank(E.astype(float)) == 19
    assert np.all(g.degree() == 4)


def test_projection_full_is_identity():
    g = complete_graph(4)
    assert np.array_equal(projection(g.full_mask()), np.eye(6, dtype=np.int64))


def test_projection_rows():
    g = Graph(3, ((0, 1), (1, 2), (0, 2)))
    P = projection(SubgraphMask(g, (True, False, True)))
    assert np.array_equal(P, np.eye(3, dtype=np.int64)[[0, 2]])


def test_projection_kills_absent_indicator():
    g = complete_graph(4)
    for e in range(g.m):
        ind = np.zeros(g.m, dtype=np.int64)
        ind[e] = 1
        assert not np.any(projection(g.mask_without([e])) @ ind)


@pytest.mark.parametrize("m", range(1, 7))
def test_projection_keeps_present_entries_exhaustive(m):
    g = Graph(m + 1, tuple((0, i) for i in range(1, m + 1)))
    v = np.arange(1, m + 1) * 7
    for bits in itertools.product([False, True], repeat=m):
        if not any(bits):
            continue
        P = projection(SubgraphMask(g, bits))
        assert (P @ v).tolist() == [v[e] for e in range(m) if bits[e]]


def test_tree_has_empty_basis():
    assert cycle_space_basis(path_graph(6)) == []


def test_triangle_basis():
    g = Graph(3, ((0, 1), (1, 2), (0, 2)))
    (b,) = cycle_space_basis(g)
    assert np.all(np.abs(b) == 1)
    assert not np.any(incidence_matrix(g) @ b)


def test_circulant_basis():
    g = circulant_graph(20, (1, 2))
    B = np.array(cycle_space_basis(g))
    assert B.shape == (21, 40)
    assert not np.any(incidence_matrix(g) @ B.T)
    assert np.linalg.matrix_rank(B.astype(float)) == 21


def test_disconnected_basis_needs_flag():
    g = Graph(6, ((0, 1), (1, 2), (0, 2), (3, 4), (4, 5), (3, 5)))
    with pytest.raises(GraphError):
        cycle_space_basis(g)
    B = np.array(cycle_space_basis(g, allow_disconnected=True))
    assert B.shape[0] == 2 and not np.any(incidence_matrix(g) @ B.T)


@settings(max_examples=60, deadline=None)
@given(graphs())
def test_basis_is_exact_kernel_basis(g):
    B = cycle_space_basis(g, allow_disconnected=True)
    comps = nx.number_connected_components(to_nx(g))
    assert len(B) == g.m - g.n + comps
    E = incidence_matrix(g)
    for b in B:
        assert b.dtype == np.int64
        assert np.max(np.abs(E @ b), initial=0) == 0
    if B:
        assert np.linalg.matrix_rank(np.array(B, dtype=float)) == len(B)


@pytest.mark.parametrize("g, k", [
    (complete_graph(4), 3), (cycle_graph(5), 2), (petersen_graph(), 3),
    (circulant_graph(20, (1, 2)), 4), (path_graph(7), 1), (wheel_with_chords(), 3),
])
def test_connectivity_examples(g, k):
    assert vertex_connectivity(g) == k


@settings(max_examples=80, deadline=None)
@given(graphs(n_max=9))
def test_connectivity_matches_networkx(g):
    assert vertex_connectivity(g) == nx.node_connectivity(to_nx(g))


@settings(max_examples=60, deadline=None)
@given(graphs(n_max=12))
def test_two_connected_iff_no_cut_vertex(g):
    G = to_nx(g)
    no_cut = nx.is_connected(G) and all(
        nx.is_connected(G.subgraph([u for u in range(g.n) if u != v])) for v in range(g.n))
    assert (vertex_connectivity(g) >= 2) == (no_cut and g.n >= 3)


def test_random_trees_are_one_connected():
    rng = np.random.default_rng(3)
    for n in range(3, 12):
        edges = tuple((int(rng.integers(i)), i) for i in range(1, n))
        assert vertex_connectivity(Graph(n, edges)) == 1


def test_components():
    g = Graph(5, ((0, 1), (2, 3)))
    assert not is_connected(g)
    assert sorted(map(sorted, connected_components(g))) == [[0, 1], [2, 3], [4]]


def test_enumerate_r0():
    g = Graph(3, ((0, 1), (1, 2), (0, 2)))
    subs = enumerate_subgraphs(g, 0)
    assert len(subs) == 1 and subs[0] == g.full_mask()


def test_enumerate_order_r1():
    g = Graph(3, ((0, 1), (1, 2), (0, 2)))
    assert [s.removed for s in enumerate_subgraphs(g, 1)] == [(), (0,), (1,), (2,)]


def test_enumerate_m5_r2():
    g = cycle_graph(5)
    subs = enumerate_subgraphs(g, 2)
    assert len(subs) == 16 == subgraph_count(5, 2)
    assert len({s.present for s in subs}) == 16


def test_circulant_subgraph_count():
    assert subgraph_count(40, 2) == 821


def test_enumerate_rejects_bad_r():
    with pytest.raises(GraphError):
        enumerate_subgraphs(cycle_graph(4), 4)


def test_graph_validation():
    with pytest.raises(GraphError):
        Graph(3, ((0, 0),))
    with pytest.raises(GraphError):
        Graph(3, ((0, 1), (1, 0)))
    with pytest.raises(GraphError):
        Graph(2, ((0, 2),))
    with pytest.raises(GraphError):
        SubgraphMask(cycle_graph(3), (False, False, False))


def test_json_roundtrip(tmp_path):
    g = petersen_graph()
    p = tmp_path / "g.json"
    p.write_text(json.dumps(g.to_json()))
    assert load_graph(p) == g
    with pytest.raises(GraphError):
        Graph.from_json({"edges": []})


def test_find_edge_and_reorientation():
    g = circulant_graph(20, (1, 2))
    assert g.find_edge(2, 1) == 1 and g.find_edge(12, 13) == 12
    flipped = g.reoriented([0, 5])
    E, F = incidence_matrix(g), incidence_matrix(flipped)
    assert np.array_equal(E[:, 0], -F[:, 0]) and np.array_equal(E[:, 1], F[:, 1])
