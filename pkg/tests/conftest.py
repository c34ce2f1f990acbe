import numpy as np
import pytest

from structmf.graph_core import Graph, SubgraphSelection, UnionFind
from structmf.model import StateSpace, random_model

ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


def random_forest_edges(m, rng, p_attach=0.8):
    """Each vertex attaches to an earlier one with probability ``p_attach``."""
    return [(int(rng.integers(v)), v) for v in range(1, m) if rng.random() < p_attach]


def random_graph(m, rng, p=0.4):
    edges = [(v, w) for v in range(m) for w in range(v + 1, m) if rng.random() < p]
    return Graph(m, edges)


def random_acyclic_subset(graph, rng, p_keep=0.7):
    uf = UnionFind(graph.vertex_count)
    kept = []
    for e in rng.permutation(graph.edge_count):
        v, w = graph.edges[e]
        if rng.random() < p_keep and uf.union(v, w):
            kept.append(int(e))
    return SubgraphSelection(graph, tuple(sorted(kept)))


def forest_model(m, k, rng, scale=1.0):
    """A random model whose graph is a random forest, with the full selection."""
    g = Graph(m, random_forest_edges(m, rng))
    return random_model(g, k, rng, scale), SubgraphSelection(g, tuple(range(g.edge_count)))


def binary_states():
    return StateSpace(2)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def _relabel(m, edges, rng):
    perm = rng.permutation(m)
    return [(int(perm[v]), int(perm[w])) for v, w in edges]


def path_instance(length, k, rng, extra=3):
    """A tree containing a path p_0..p_length plus the dropped edge (p_0, p_length)."""
    m = length + 1 + extra
    tree = [(i, i + 1) for i in range(length)]
    tree += [(int(rng.integers(v)), v) for v in range(length + 1, m)]
    return _instance(m, tree, [(0, length)], k, rng)


def cross_instance(k, rng):
    """Several trees joined only by dropped edges between different trees."""
    m = int(rng.integers(4, 9))
    # the last vertex never attaches, so there are at least two trees
    tree = [e for e in random_forest_edges(m, rng, p_attach=0.6) if e[1] != m - 1]
    uf = UnionFind(m)
    for v, w in tree:
        uf.union(v, w)
    extra = [(v, w) for v in range(m) for w in range(v + 1, m)
             if uf.find(v) != uf.find(w) and rng.random() < 0.4] or [(0, m - 1)]
    return _instance(m, tree, extra, k, rng)


def mixed_instance(k, rng):
    """Two or more trees with both intra and cross dropped edges."""
    m = int(rng.integers(6, 10))
    tree = [(i, i + 1) for i in range(3)]
    tree += [(int(rng.integers(v)), v) for v in range(4, m - 1) if rng.random() < 0.75]
    uf = UnionFind(m)
    for v, w in tree:
        uf.union(v, w)
    tset = set(tree)
    extra = [(0, 3)]
    for v in range(m):
        for w in range(v + 1, m):
            if (v, w) not in tset and (v, w) != (0, 3) and rng.random() < 0.25:
                extra.append((v, w))
    if all(uf.find(v) == uf.find(w) for v, w in extra):
        extra.append((0, m - 1))
    return _instance(m, tree, extra, k, rng)


def _instance(m, tree, extra, k, rng):
    edges = _relabel(m, tree + extra, rng)
    g = Graph(m, edges)
    kept = [g.index_of(v, w) for v, w in edges[:len(tree)]]
    model = random_model(g, k, rng)
    return model, SubgraphSelection(g, tuple(sorted(kept)))


def random_moments(selection, k, rng, scale=1.0):
    """Consistent moments: the forest marginals at a random parameter."""
    from structmf.tree_inference import sum_product
    m = selection.graph.vertex_count
    node = rng.normal(scale=scale, size=(m, k))
    edge = rng.normal(scale=scale, size=(len(selection.kept), k, k))
    return sum_product(selection, (node, edge)).moments
