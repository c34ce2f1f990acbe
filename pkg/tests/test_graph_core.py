import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from structmf.graph_core import (
    Graph,
    GraphError,
    Kind,
    PRESETS,
    SubgraphSelection,
    UnionFind,
    classify,
    comb_tree,
    empty_selection,
    grid,
    load_selection,
    rows_forest,
    save_selection,
    unique_path,
)

from conftest import random_acyclic_subset, random_graph


def _sel(graph, pairs):
    return SubgraphSelection.from_edges(graph, pairs)


def test_grid_counts():
    for n in range(1, 6):
        g = grid(n)
        assert g.vertex_count == n * n
        assert g.edge_count == 2 * n * (n - 1)
    assert set(grid(2).edges) == {(0, 1), (0, 2), (1, 3), (2, 3)}


def test_graph_rejects_bad_edges():
    with pytest.raises(GraphError):
        Graph(3, [(0, 0)])
    with pytest.raises(GraphError):
        Graph(3, [(0, 1), (1, 0)])
    with pytest.raises(GraphError):
        Graph(3, [(0, 3)])


def test_edges_are_canonical():
    g = Graph(3, [(2, 1), (1, 0)])
    assert g.edges == ((1, 2), (0, 1))
    assert g.index_of(2, 1) == 0


def test_selection_rejects_cycle():
    g = grid(3)
    with pytest.raises(GraphError):
        _sel(g, [(0, 1), (1, 4), (3, 4), (0, 3)])


def test_selection_rejects_non_edge():
    with pytest.raises(GraphError):
        _sel(grid(3), [(0, 2)])


def test_comb_tree_on_3x3():
    dec = classify(comb_tree(grid(3)))
    assert len(dec.components) == 1
    comp = dec.components[0]
    assert comp.kind is Kind.B_ACYCLIC
    assert len(comp.intra_dropped) == 4
    assert dec.dropped_cross == ()


def test_rows_forest_on_3x3():
    dec = classify(rows_forest(grid(3)))
    assert [c.vertices for c in dec.components] == [(0, 1, 2), (3, 4, 5), (6, 7, 8)]
    assert all(c.kind is Kind.V_ACYCLIC for c in dec.components)
    assert len(dec.dropped_cross) == 6


def test_empty_selection_is_v_acyclic():
    dec = classify(empty_selection(grid(2)))
    assert len(dec.components) == 4
    assert dec.is_v_acyclic
    assert len(dec.dropped_cross) == 4


def test_preset_sizes_9x9():
    g = grid(9)
    assert len(PRESETS["nmf"](g).kept) == 0
    assert len(PRESETS["smf1"](g).kept) == 72
    assert len(PRESETS["smf2"](g).kept) == 80
    dec = classify(PRESETS["smf2"](g))
    assert len(dec.components) == 1 and len(dec.dropped_intra[0]) == 64
    dec = classify(PRESETS["smf1"](g))
    assert len(dec.components) == 9 and dec.is_v_acyclic


def test_unique_path_comb():
    g = grid(3)
    dec = classify(comb_tree(g))
    path = unique_path(dec, (1, 4))
    assert path.vertices == (1, 0, 3, 4)
    assert path.length == 3


def test_unique_path_2x2_spanning_tree():
    g = grid(2)
    dec = classify(_sel(g, [(0, 1), (1, 3), (2, 3)]))
    assert unique_path(dec, (0, 2)).vertices == (0, 1, 3, 2)


def test_unique_path_refuses_cross_and_kept():
    g = grid(3)
    dec = classify(rows_forest(g))
    with pytest.raises(GraphError):
        unique_path(dec, (0, 3))
    with pytest.raises(GraphError):
        unique_path(dec, (0, 1))


def _literal_kinds(selection):
    """A component is b-acyclic iff adding some single edge of G to E' closes a cycle inside it."""
    g = selection.graph
    uf = UnionFind(g.vertex_count)
    for v, w in selection.kept_edges:
        uf.union(v, w)
    bad = set()
    for e in selection.dropped:
        v, w = g.edges[e]
        if uf.find(v) == uf.find(w):
            bad.add(uf.find(v))
    return [Kind.B_ACYCLIC if uf.find(c.vertices[0]) in bad else Kind.V_ACYCLIC
            for c in classify(selection).components]


def test_classification_matches_definition_on_random_selections():
    rng = np.random.default_rng(0)
    for _ in range(1000):
        g = random_graph(int(rng.integers(1, 10)), rng, p=rng.uniform(0.1, 0.8))
        sel = random_acyclic_subset(g, rng, p_keep=rng.uniform(0.0, 1.0))
        dec = classify(sel)
        assert [c.kind for c in dec.components] == _literal_kinds(sel)


def _simple_paths(adj, a, b, seen=None):
    seen = (seen or set()) | {a}
    if a == b:
        return 1
    return sum(_simple_paths(adj, w, b, seen) for w in adj[a] if w not in seen)


@st.composite
def selections(draw):
    m = draw(st.integers(2, 9))
    seed = draw(st.integers(0, 2 ** 32 - 1))
    rng = np.random.default_rng(seed)
    g = random_graph(m, rng, p=0.5)
    return random_acyclic_subset(g, rng, p_keep=0.8)


@settings(max_examples=200, deadline=None)
@given(selections())
def test_path_closes_unique_cycle(sel):
    dec = classify(sel)
    adj = {v: [] for v in range(sel.graph.vertex_count)}
    for v, w in sel.kept_edges:
        adj[v].append(w)
        adj[w].append(v)
    for c, group in dec.dropped_intra.items():
        for e in group:
            a, b = sel.graph.edges[e]
            path = unique_path(dec, e)
            verts = path.vertices
            assert verts[0] == a and verts[-1] == b
            assert len(set(verts)) == len(verts)
            for i, pos in enumerate(path.edges):
                assert set(sel.kept_edges[pos]) == {verts[i], verts[i + 1]}
            assert _simple_paths(adj, a, b) == 1


@settings(max_examples=200, deadline=None)
@given(selections())
def test_decomposition_partitions(sel):
    dec = classify(sel)
    verts = sorted(v for c in dec.components for v in c.vertices)
    assert verts == list(range(sel.graph.vertex_count))
    kept = sorted(e for c in dec.components for e in c.kept)
    assert kept == list(sel.kept)
    intra = {e for c in dec.components for e in c.intra_dropped}
    assert intra | set(dec.dropped_cross) == set(sel.dropped)
    assert not intra & set(dec.dropped_cross)
    for e in dec.dropped_cross:
        a, b = sel.graph.edges[e]
        assert dec.label[a] != dec.label[b]


def test_selection_json_round_trip(tmp_path):
    g = grid(3)
    sel = comb_tree(g)
    path = tmp_path / "sel.json"
    save_selection(sel, path)
    assert load_selection(path, g) == sel


def test_selection_json_errors(tmp_path):
    g = grid(3)
    path = tmp_path / "bad.json"
    path.write_text(json.dumps({"edges": []}))
    with pytest.raises(GraphError):
        load_selection(path, g)
    path.write_text(json.dumps({"kept_edges": [[0, 1], [1, 4], [4, 3], [3, 0]]}))
    with pytest.raises(GraphError):
        load_selection(path, g)
