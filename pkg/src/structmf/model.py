"""Pairwise discrete MRFs in overcomplete exponential-family form.

Parameter vectors are indexed by the potential set ``F = (V x X) u (E x X^2)``
flattened in a fixed order:

* vertex potentials first, ``(v, x) -> v * k + x``;
* then edge potentials, ``(e, x, y) -> m * k + e * k * k + x * k + y``,

where ``k = |X|``, ``e`` indexes ``graph.edges`` and ``x`` is the state of the
smaller endpoint of the canonical edge ``(v, w)``, ``v < w``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator, NamedTuple, Sequence

import numpy as np

from .graph_core import Graph, GraphError, SubgraphSelection, grid


class ModelError(ValueError):
    pass


@dataclass(frozen=True)
class StateSpace:
    size: int
    labels: tuple[float, ...] | None = None

    def __post_init__(self):
        if self.size < 2:
            raise ModelError("state space needs at least two states")
        if self.labels is not None and len(self.labels) != self.size:
            raise ModelError("one label per state required")


ISING_STATES = StateSpace(2, (-1.0, 1.0))


class VertexPotential(NamedTuple):
    vertex: int
    x: int


class EdgePotential(NamedTuple):
    edge: int
    x: int
    y: int


def dimension(graph: Graph, k: int) -> int:
    return graph.vertex_count * k + graph.edge_count * k * k


def index_set(graph: Graph, states: StateSpace) -> Iterator[VertexPotential | EdgePotential]:
    """Enumerate ``F`` in flat-index order."""
    k = states.size
    for v in range(graph.vertex_count):
        for x in range(k):
            yield VertexPotential(v, x)
    for e in range(graph.edge_count):
        for x in range(k):
            for y in range(k):
                yield EdgePotential(e, x, y)


def flat_index(graph: Graph, k: int, potential: VertexPotential | EdgePotential) -> int:
    if isinstance(potential, VertexPotential):
        return potential.vertex * k + potential.x
    return graph.vertex_count * k + (potential.edge * k + potential.x) * k + potential.y


class Model:
    """Graph, state space and parameter vector ``theta`` over ``F``.

    ``unary`` and ``pairwise`` are read-only views into ``theta`` with shapes
    ``(m, k)`` and ``(|E|, k, k)``.
    """

    def __init__(self, graph: Graph, states: StateSpace, theta):
        theta = np.array(theta, dtype=float).ravel()
        if theta.shape != (dimension(graph, states.size),):
            raise ModelError(f"theta has {theta.size} entries, expected {dimension(graph, states.size)}")
        if not np.all(np.isfinite(theta)):
            raise ModelError("theta must be finite")
        theta.setflags(write=False)
        self.graph = graph
        self.states = states
        self.theta = theta

    @classmethod
    def from_tables(cls, graph: Graph, states: StateSpace, unary=None, pairwise=None) -> "Model":
        m, k, ne = graph.vertex_count, states.size, graph.edge_count
        unary = np.zeros((m, k)) if unary is None else np.asarray(unary, dtype=float)
        pairwise = np.zeros((ne, k, k)) if pairwise is None else np.asarray(pairwise, dtype=float)
        if unary.shape != (m, k) or pairwise.shape != (ne, k, k):
            raise ModelError("unary must be (m, k) and pairwise (|E|, k, k)")
        return cls(graph, states, np.concatenate([unary.ravel(), pairwise.ravel()]))

    @property
    def k(self) -> int:
        return self.states.size

    @property
    def d(self) -> int:
        return self.theta.size

    @property
    def unary(self) -> np.ndarray:
        return self.theta[: self.graph.vertex_count * self.k].reshape(-1, self.k)

    @property
    def pairwise(self) -> np.ndarray:
        k = self.k
        return self.theta[self.graph.vertex_count * k:].reshape(-1, k, k)

    def score(self, x: Sequence[int]) -> float:
        """Unnormalised log-probability ``<phi(x), theta>``."""
        x = np.asarray(x)
        total = self.unary[np.arange(self.graph.vertex_count), x].sum()
        if self.graph.edge_count:
            ends = np.asarray(self.graph.edges)
            total += self.pairwise[np.arange(len(ends)), x[ends[:, 0]], x[ends[:, 1]]].sum()
        return float(total)


def suff_stats(model: Model, x: Sequence[int]) -> np.ndarray:
    """Indicator vector ``phi(x)`` over ``F``: one 1 per vertex and one per edge."""
    x = np.asarray(x, dtype=int)
    m, k = model.graph.vertex_count, model.k
    if x.shape != (m,) or x.min() < 0 or x.max() >= k:
        raise ModelError("configuration out of range")
    phi = np.zeros(model.d)
    phi[np.arange(m) * k + x] = 1.0
    for e, (v, w) in enumerate(model.graph.edges):
        phi[m * k + (e * k + x[v]) * k + x[w]] = 1.0
    return phi


# -- splitting along a selection -------------------------------------------

@dataclass(frozen=True)
class SplitParams:
    """``theta`` split into kept coordinates ``omega`` and dropped ``vartheta``.

    ``omega`` holds all vertex potentials followed by kept-edge tables in the
    order of ``selection.kept``; ``vartheta`` holds dropped-edge tables in the
    order of ``selection.dropped``.
    """

    omega: np.ndarray
    vartheta: np.ndarray
    kept_index: np.ndarray
    dropped_index: np.ndarray

    def merge(self) -> np.ndarray:
        theta = np.empty(self.omega.size + self.vartheta.size)
        theta[self.kept_index] = self.omega
        theta[self.dropped_index] = self.vartheta
        return theta


def kept_coordinates(selection: SubgraphSelection, k: int) -> tuple[np.ndarray, np.ndarray]:
    """Flat indices into ``theta`` of ``F'`` and of ``F \\ F'``."""
    m = selection.graph.vertex_count
    block = np.arange(k * k)

    def edge_coords(edges):
        return (m * k + np.asarray(edges, dtype=int)[:, None] * k * k + block).ravel() if len(edges) else np.zeros(0, int)

    kept = np.concatenate([np.arange(m * k), edge_coords(selection.kept)])
    return kept, edge_coords(selection.dropped)


def split_params(model: Model, selection: SubgraphSelection) -> SplitParams:
    if selection.graph != model.graph:
        raise ModelError("selection is over a different graph")
    kept, dropped = kept_coordinates(selection, model.k)
    return SplitParams(model.theta[kept].copy(), model.theta[dropped].copy(), kept, dropped)


# -- constructors -----------------------------------------------------------

def ising(graph: Graph, coupling: float, field: float = 0.0) -> Model:
    """Ising model with +-1 spins in indicator form; state 0 is -1, state 1 is +1."""
    s = np.array(ISING_STATES.labels)
    table = coupling * np.outer(s, s)
    unary = np.tile(field * s, (graph.vertex_count, 1))
    return Model.from_tables(graph, ISING_STATES, unary, np.tile(table, (graph.edge_count, 1, 1)))


def ising_grid(n: int, temperature: float) -> Model:
    """Zero-field n x n Ising model with coupling ``1 / temperature``.

    ``temperature=float('inf')`` gives the all-zero parameter vector.
    """
    if not temperature > 0:
        raise ModelError("temperature must be positive")
    return ising(grid(n), 1.0 / temperature)


def random_model(graph: Graph, k: int, rng: np.random.Generator, scale: float = 1.0) -> Model:
    states = StateSpace(k)
    return Model.from_tables(
        graph, states,
        rng.normal(scale=scale, size=(graph.vertex_count, k)),
        rng.normal(scale=scale, size=(graph.edge_count, k, k)),
    )


# -- file I/O ---------------------------------------------------------------

def model_to_dict(model: Model) -> dict:
    return {
        "vertex_count": model.graph.vertex_count,
        "state_size": model.k,
        "edges": [list(e) for e in model.graph.edges],
        "unary": model.unary.tolist(),
        "pairwise": [t.ravel().tolist() for t in model.pairwise],
    }


def model_from_dict(data: dict) -> Model:
    try:
        m = int(data["vertex_count"])
        k = int(data["state_size"])
        edges = [tuple(e) for e in data["edges"]]
        unary = np.asarray(data["unary"], dtype=float)
        pairwise = np.asarray(data["pairwise"], dtype=float)
    except (KeyError, TypeError, ValueError) as exc:
        raise ModelError(f"malformed model: {exc}") from None
    if any(len(e) != 2 for e in edges):
        raise ModelError("edges must be [v, w] pairs")
    # tables of flipped edges are transposed into canonical orientation
    flipped = [v > w for v, w in edges]
    try:
        graph = Graph(m, tuple(edges))
    except GraphError as exc:
        raise ModelError(str(exc)) from None
    if unary.shape != (m, k):
        raise ModelError(f"unary must have shape ({m}, {k})")
    if pairwise.shape not in ((len(edges), k * k), (len(edges), k, k)) and not (len(edges) == 0 and pairwise.size == 0):
        raise ModelError(f"pairwise must hold {len(edges)} tables of {k}x{k}")
    pairwise = pairwise.reshape(len(edges), k, k)
    for i, f in enumerate(flipped):
        if f:
            pairwise[i] = pairwise[i].T
    if not (np.all(np.isfinite(unary)) and np.all(np.isfinite(pairwise))):
        raise ModelError("parameters must be finite")
    return Model.from_tables(graph, StateSpace(k), unary, pairwise)


def load_model(path: str | Path) -> Model:
    with open(path) as fh:
        return model_from_dict(json.load(fh))


def save_model(model: Model, path: str | Path) -> None:
    with open(path, "w") as fh:
        json.dump(model_to_dict(model), fh)
