"""Undirected graphs, acyclic edge selections and their component structure.

A selection keeps a subset ``E'`` of the edges of a graph. Since ``E'`` must be
a forest, each connected component of ``(V, E')`` is a tree, and every dropped
edge either joins two components (a *cross* edge) or closes a cycle inside one
component (an *intra* edge). A component is v-acyclic when it owns no intra
edge, b-acyclic otherwise.

Vertices are integers ``0..m-1`` and edges are stored canonically as ``(v, w)``
with ``v < w``.
"""

from __future__ import annotations

import enum
import json
from collections import deque
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Iterable, Sequence


class GraphError(ValueError):
    """Raised for malformed graphs, selections or edge queries."""


class Kind(enum.Enum):
    V_ACYCLIC = "VAcyclic"
    B_ACYCLIC = "BAcyclic"


def canonical(v: int, w: int) -> tuple[int, int]:
    return (v, w) if v < w else (w, v)


class UnionFind:
    def __init__(self, n: int):
        self.parent = list(range(n))

    def find(self, x: int) -> int:
        parent = self.parent
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    def union(self, a: int, b: int) -> bool:
        """Merge the sets of ``a`` and ``b``; False if they were already joined."""
        ra, rb = self.find(a), self.find(b)
        if ra == rb:
            return False
        self.parent[rb] = ra
        return True


@dataclass(frozen=True)
class Graph:
    vertex_count: int
    edges: tuple[tuple[int, int], ...]

    def __post_init__(self):
        if self.vertex_count < 1:
            raise GraphError("vertex_count must be positive")
        edges = []
        for v, w in self.edges:
            v, w = int(v), int(w)
            if v == w:
                raise GraphError(f"self-loop at vertex {v}")
            if not (0 <= v < self.vertex_count and 0 <= w < self.vertex_count):
                raise GraphError(f"edge ({v}, {w}) out of range")
            edges.append(canonical(v, w))
        if len(set(edges)) != len(edges):
            raise GraphError("duplicate edges")
        object.__setattr__(self, "edges", tuple(edges))

    @property
    def edge_count(self) -> int:
        return len(self.edges)

    @cached_property
    def edge_index(self) -> dict[tuple[int, int], int]:
        return {e: i for i, e in enumerate(self.edges)}

    def index_of(self, v: int, w: int) -> int:
        try:
            return self.edge_index[canonical(v, w)]
        except KeyError:
            raise GraphError(f"({v}, {w}) is not an edge") from None


@dataclass(frozen=True)
class SubgraphSelection:
    """A forest ``E'`` of kept edges, stored as sorted indices into ``graph.edges``."""

    graph: Graph
    kept: tuple[int, ...]

    def __post_init__(self):
        kept = tuple(sorted({int(i) for i in self.kept}))
        if kept and (kept[0] < 0 or kept[-1] >= self.graph.edge_count):
            raise GraphError("kept edge index out of range")
        uf = UnionFind(self.graph.vertex_count)
        for i in kept:
            v, w = self.graph.edges[i]
            if not uf.union(v, w):
                raise GraphError(f"kept edges contain a cycle through ({v}, {w})")
        object.__setattr__(self, "kept", kept)

    @classmethod
    def from_edges(cls, graph: Graph, kept_edges: Iterable[Sequence[int]]) -> "SubgraphSelection":
        return cls(graph, tuple(graph.index_of(v, w) for v, w in kept_edges))

    @property
    def kept_edges(self) -> tuple[tuple[int, int], ...]:
        return tuple(self.graph.edges[i] for i in self.kept)

    @cached_property
    def dropped(self) -> tuple[int, ...]:
        keep = set(self.kept)
        return tuple(i for i in range(self.graph.edge_count) if i not in keep)

    @cached_property
    def kept_position(self) -> dict[int, int]:
        """Map from graph edge index to its position in ``kept``."""
        return {e: j for j, e in enumerate(self.kept)}

    @cached_property
    def adjacency(self) -> tuple[tuple[tuple[int, int], ...], ...]:
        """Per vertex, the ``(neighbour, kept position)`` pairs along kept edges."""
        adj: list[list[tuple[int, int]]] = [[] for _ in range(self.graph.vertex_count)]
        for j, i in enumerate(self.kept):
            v, w = self.graph.edges[i]
            adj[v].append((w, j))
            adj[w].append((v, j))
        return tuple(tuple(a) for a in adj)


@dataclass(frozen=True)
class Component:
    index: int
    vertices: tuple[int, ...]
    kept: tuple[int, ...]
    intra_dropped: tuple[int, ...]
    cross_dropped: tuple[int, ...]

    @property
    def kind(self) -> Kind:
        return Kind.B_ACYCLIC if self.intra_dropped else Kind.V_ACYCLIC


@dataclass(frozen=True)
class ComponentDecomposition:
    selection: SubgraphSelection
    components: tuple[Component, ...]
    label: tuple[int, ...]
    dropped_cross: tuple[int, ...]
    dropped_intra: dict[int, tuple[int, ...]] = field(hash=False)

    @property
    def is_v_acyclic(self) -> bool:
        return all(c.kind is Kind.V_ACYCLIC for c in self.components)

    def component_of(self, v: int) -> Component:
        return self.components[self.label[v]]


@dataclass(frozen=True)
class TreePath:
    vertices: tuple[int, ...]
    # positions in ``selection.kept`` of the edges (p_{i-1}, p_i), i = 1..k
    edges: tuple[int, ...]

    @property
    def length(self) -> int:
        return len(self.vertices) - 1


def connected_components(selection: SubgraphSelection) -> ComponentDecomposition:
    """Split ``(V, E')`` into trees and sort the dropped edges into cross/intra.

    Components are numbered by their smallest vertex; vertex lists are sorted.
    """
    graph = selection.graph
    m = graph.vertex_count
    label = [-1] * m
    groups: list[list[int]] = []
    for start in range(m):
        if label[start] >= 0:
            continue
        c = len(groups)
        label[start] = c
        members = [start]
        queue = deque([start])
        while queue:
            u = queue.popleft()
            for w, _ in selection.adjacency[u]:
                if label[w] < 0:
                    label[w] = c
                    members.append(w)
                    queue.append(w)
        groups.append(sorted(members))

    kept_by: list[list[int]] = [[] for _ in groups]
    for i in selection.kept:
        kept_by[label[graph.edges[i][0]]].append(i)
    intra: list[list[int]] = [[] for _ in groups]
    cross_by: list[list[int]] = [[] for _ in groups]
    dropped_cross = []
    for i in selection.dropped:
        a, b = graph.edges[i]
        if label[a] == label[b]:
            intra[label[a]].append(i)
        else:
            dropped_cross.append(i)
            cross_by[label[a]].append(i)
            cross_by[label[b]].append(i)

    components = tuple(
        Component(c, tuple(groups[c]), tuple(kept_by[c]), tuple(intra[c]), tuple(cross_by[c]))
        for c in range(len(groups))
    )
    return ComponentDecomposition(
        selection=selection,
        components=components,
        label=tuple(label),
        dropped_cross=tuple(dropped_cross),
        dropped_intra={c: tuple(intra[c]) for c in range(len(groups)) if intra[c]},
    )


def classify(selection: SubgraphSelection) -> ComponentDecomposition:
    """Decompose and label each component v-acyclic or b-acyclic.

    Adding an edge inside a tree always closes a cycle and an edge between two
    trees never does, so a component is b-acyclic exactly when some dropped
    edge has both endpoints in it.
    """
    return connected_components(selection)


def unique_path(decomposition: ComponentDecomposition, edge: int | tuple[int, int]) -> TreePath:
    """Tree path in ``E'`` between the endpoints of a dropped intra edge."""
    selection = decomposition.selection
    graph = selection.graph
    if not isinstance(edge, int):
        edge = graph.index_of(*edge)
    a, b = graph.edges[edge]
    if edge in selection.kept_position:
        raise GraphError(f"({a}, {b}) is a kept edge")
    if decomposition.label[a] != decomposition.label[b]:
        raise GraphError(f"({a}, {b}) joins two components; no path in E'")

    parent: dict[int, tuple[int, int]] = {a: (-1, -1)}
    queue = deque([a])
    while queue and b not in parent:
        u = queue.popleft()
        for w, j in selection.adjacency[u]:
            if w not in parent:
                parent[w] = (u, j)
                queue.append(w)
    vertices = [b]
    edges = []
    while vertices[-1] != a:
        u, j = parent[vertices[-1]]
        edges.append(j)
        vertices.append(u)
    return TreePath(tuple(reversed(vertices)), tuple(reversed(edges)))


# -- presets ----------------------------------------------------------------

def grid(n: int) -> Graph:
    """n x n lattice; vertex ``(r, c)`` has id ``r * n + c``."""
    if n < 1:
        raise GraphError("grid size must be >= 1")
    edges = []
    for r in range(n):
        for c in range(n):
            v = r * n + c
            if c + 1 < n:
                edges.append((v, v + 1))
            if r + 1 < n:
                edges.append((v, v + n))
    return Graph(n * n, tuple(edges))


def _grid_side(graph: Graph) -> int:
    n = int(round(graph.vertex_count ** 0.5))
    if n * n != graph.vertex_count or graph.edge_count != 2 * n * (n - 1):
        raise GraphError("not a square grid graph")
    return n


def rows_forest(graph: Graph) -> SubgraphSelection:
    """Keep horizontal edges only: every row is a chain and the selection is v-acyclic."""
    n = _grid_side(graph)
    return SubgraphSelection(graph, tuple(i for i, (v, w) in enumerate(graph.edges) if w == v + 1 and v // n == w // n))


def comb_tree(graph: Graph) -> SubgraphSelection:
    """All rows plus the column-0 spine: a spanning tree, b-acyclic for n >= 2."""
    n = _grid_side(graph)
    kept = []
    for i, (v, w) in enumerate(graph.edges):
        horizontal = w == v + 1 and v // n == w // n
        spine = w == v + n and v % n == 0
        if horizontal or spine:
            kept.append(i)
    return SubgraphSelection(graph, tuple(kept))


def empty_selection(graph: Graph) -> SubgraphSelection:
    return SubgraphSelection(graph, ())


def full_selection(graph: Graph) -> SubgraphSelection:
    """Keep every edge; only valid when the graph itself is a forest."""
    return SubgraphSelection(graph, tuple(range(graph.edge_count)))


PRESETS = {"nmf": empty_selection, "smf1": rows_forest, "smf2": comb_tree}


# -- file I/O ---------------------------------------------------------------

def load_selection(path: str | Path, graph: Graph) -> SubgraphSelection:
    """Read ``{"kept_edges": [[v, w], ...]}`` and validate it against ``graph``."""
    with open(path) as fh:
        data = json.load(fh)
    if not isinstance(data, dict) or "kept_edges" not in data:
        raise GraphError(f"{path}: expected an object with 'kept_edges'")
    pairs = data["kept_edges"]
    if not all(isinstance(p, (list, tuple)) and len(p) == 2 for p in pairs):
        raise GraphError(f"{path}: kept_edges must be a list of [v, w] pairs")
    return SubgraphSelection.from_edges(graph, pairs)


def save_selection(selection: SubgraphSelection, path: str | Path) -> None:
    with open(path, "w") as fh:
        json.dump({"kept_edges": [list(e) for e in selection.kept_edges]}, fh)
