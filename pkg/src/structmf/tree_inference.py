"""Exact inference on forests, plus exact oracles for arbitrary (small) models.

Forest parameters and moments are kept in two arrays: ``node`` with shape
``(m, k)`` and ``edge`` with shape ``(|E'|, k, k)`` in the order of
``selection.kept``, canonical orientation (rows index the smaller endpoint).
Flattened, this is the ``F'`` ordering used by :func:`model.split_params`.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .graph_core import Graph, SubgraphSelection, connected_components
from .model import Model

EPS = 1e-12


class IntractableError(RuntimeError):
    """Exact computation refused by a size guard."""


def logsumexp(a: np.ndarray, axis=None) -> np.ndarray:
    mx = np.max(a, axis=axis, keepdims=True)
    mx = np.where(np.isfinite(mx), mx, 0.0)
    out = np.log(np.sum(np.exp(a - mx), axis=axis, keepdims=True)) + mx
    return np.squeeze(out, axis=axis) if axis is not None else out.reshape(())


def _xlogx(p: np.ndarray) -> np.ndarray:
    return np.where(p > 0, p * np.log(np.maximum(p, EPS)), 0.0)


@dataclass
class ForestMoments:
    """Node marginals ``(m, k)`` and kept-edge pair marginals ``(|E'|, k, k)``."""

    node: np.ndarray
    edge: np.ndarray

    def flat(self) -> np.ndarray:
        return np.concatenate([self.node.ravel(), self.edge.ravel()])

    @classmethod
    def from_flat(cls, vec, m: int, k: int) -> "ForestMoments":
        vec = np.asarray(vec, dtype=float)
        return cls(vec[: m * k].reshape(m, k).copy(), vec[m * k:].reshape(-1, k, k).copy())

    def copy(self) -> "ForestMoments":
        return ForestMoments(self.node.copy(), self.edge.copy())

    def consistency_error(self, selection: SubgraphSelection) -> float:
        """Largest violation of normalisation and marginalisation constraints."""
        err = np.abs(self.node.sum(axis=1) - 1.0).max(initial=0.0)
        if len(selection.kept):
            ends = np.asarray(selection.kept_edges)
            err = max(err,
                      np.abs(self.edge.sum(axis=2) - self.node[ends[:, 0]]).max(),
                      np.abs(self.edge.sum(axis=1) - self.node[ends[:, 1]]).max())
        return float(err)


def uniform_moments(selection: SubgraphSelection, k: int) -> ForestMoments:
    m = selection.graph.vertex_count
    return ForestMoments(np.full((m, k), 1.0 / k), np.full((len(selection.kept), k, k), 1.0 / (k * k)))


@dataclass
class ForestInferenceResult:
    moments: ForestMoments
    log_partition_per_component: np.ndarray

    @property
    def log_partition(self) -> float:
        return float(self.log_partition_per_component.sum())


# -- tree schedules ---------------------------------------------------------

@dataclass(frozen=True)
class Level:
    nodes: np.ndarray    # local indices at this depth
    parents: np.ndarray  # local indices of their parents
    edges: np.ndarray    # positions in selection.kept of the parent edges
    flip: np.ndarray     # (n, 1, 1) bool: parent is the larger endpoint


@dataclass(frozen=True)
class TreeSchedule:
    """BFS layout of one tree component, rooted at its smallest vertex."""

    vertices: np.ndarray          # global ids, local index = position
    levels: tuple[Level, ...]     # depth >= 1, shallowest first
    edge_nodes: np.ndarray        # local child index per kept edge of the tree
    edge_positions: np.ndarray    # positions in selection.kept, aligned with edge_nodes
    edge_flip: np.ndarray         # (n_edges, 1, 1)


def _schedule(selection: SubgraphSelection, vertices) -> TreeSchedule:
    root = vertices[0]
    local = {root: 0}
    order = [root]
    depth = [0]
    parent = [-1]
    pedge = [-1]
    i = 0
    while i < len(order):
        u = order[i]
        for w, j in selection.adjacency[u]:
            if w not in local:
                local[w] = len(order)
                order.append(w)
                depth.append(depth[i] + 1)
                parent.append(i)
                pedge.append(j)
        i += 1
    depth = np.asarray(depth)
    parent = np.asarray(parent)
    pedge = np.asarray(pedge)
    verts = np.asarray(order)
    flip = np.zeros(len(order), dtype=bool)
    flip[1:] = verts[parent[1:]] > verts[1:]
    levels = []
    for dpt in range(1, int(depth.max()) + 1):
        nodes = np.flatnonzero(depth == dpt)
        levels.append(Level(nodes, parent[nodes], pedge[nodes], flip[nodes][:, None, None]))
    child = np.arange(1, len(order))
    return TreeSchedule(verts, tuple(levels), child, pedge[child], flip[child][:, None, None])


@lru_cache(maxsize=64)
def forest_schedules(selection: SubgraphSelection) -> tuple[TreeSchedule, ...]:
    dec = connected_components(selection)
    return tuple(_schedule(selection, c.vertices) for c in dec.components)


# -- sum-product --------------------------------------------------------------

@dataclass
class TreePass:
    log_partition: float
    node: np.ndarray       # (n, k) marginals, local order
    edge: np.ndarray       # (n - 1, k, k) marginals of edge_positions, canonical orientation
    inc: np.ndarray        # summed child messages per node
    psi: np.ndarray        # (n, k, k) parent->child oriented edge potentials


def tree_sum_product(sched: TreeSchedule, node_p: np.ndarray, edge_p: np.ndarray,
                     marginals: bool = True) -> TreePass:
    """Log-space two-pass sum-product on one tree.

    ``node_p`` is in local order, ``edge_p`` covers all kept edges of the
    selection (only this tree's rows are read).
    """
    n, k = node_p.shape
    if n == 1:
        lz = float(logsumexp(node_p[0]))
        return TreePass(lz, np.exp(node_p - lz), np.zeros((0, k, k)), np.zeros_like(node_p), np.zeros((1, k, k)))

    inc = np.zeros((n, k))
    msg = np.zeros((n, k))
    psi = np.zeros((n, k, k))
    for lvl in reversed(sched.levels):
        t = edge_p[lvl.edges]
        t = np.where(lvl.flip, t.transpose(0, 2, 1), t)
        psi[lvl.nodes] = t
        mes = logsumexp(t + (node_p[lvl.nodes] + inc[lvl.nodes])[:, None, :], axis=2)
        msg[lvl.nodes] = mes
        np.add.at(inc, lvl.parents, mes)
    lz = float(logsumexp(node_p[0] + inc[0]))
    if not marginals:
        return TreePass(lz, None, None, inc, psi)

    out = np.zeros((n, k))
    pb = np.zeros((n, k))
    for lvl in sched.levels:
        par = lvl.parents
        b = node_p[par] + inc[par] + out[par] - msg[lvl.nodes]
        pb[lvl.nodes] = b
        out[lvl.nodes] = logsumexp(psi[lvl.nodes] + b[:, :, None], axis=1)
    node_log = node_p + inc + out
    node = np.exp(node_log - logsumexp(node_log, axis=1)[:, None])

    c = sched.edge_nodes
    joint = pb[c][:, :, None] + psi[c] + (node_p[c] + inc[c])[:, None, :]
    joint = np.exp(joint - logsumexp(joint.reshape(len(c), -1), axis=1)[:, None, None])
    edge = np.where(sched.edge_flip, joint.transpose(0, 2, 1), joint)
    return TreePass(lz, node, edge, inc, psi)


def split_forest_vector(vec, m: int, k: int) -> tuple[np.ndarray, np.ndarray]:
    vec = np.asarray(vec, dtype=float)
    return vec[: m * k].reshape(m, k), vec[m * k:].reshape(-1, k, k)


def sum_product(selection: SubgraphSelection, zeta) -> ForestInferenceResult:
    """Exact log partition and moments of the forest family at parameters ``zeta``.

    ``zeta`` is a flat vector over ``F'`` or a ``(node, edge)`` pair of arrays.
    """
    m = selection.graph.vertex_count
    if isinstance(zeta, tuple):
        node_p, edge_p = (np.asarray(z, dtype=float) for z in zeta)
        k = node_p.shape[1]
    else:
        zeta = np.asarray(zeta, dtype=float)
        k = _infer_k(zeta.size, m, len(selection.kept))
        node_p, edge_p = split_forest_vector(zeta, m, k)
    node = np.empty((m, k))
    edge = np.empty((len(selection.kept), k, k))
    scheds = forest_schedules(selection)
    logz = np.empty(len(scheds))
    for c, sched in enumerate(scheds):
        res = tree_sum_product(sched, node_p[sched.vertices], edge_p)
        logz[c] = res.log_partition
        node[sched.vertices] = res.node
        edge[sched.edge_positions] = res.edge
    return ForestInferenceResult(ForestMoments(node, edge), logz)


def _infer_k(size: int, m: int, ne: int) -> int:
    for k in range(2, 64):
        if m * k + ne * k * k == size:
            return k
    raise ValueError(f"vector of size {size} does not match m={m}, |E'|={ne}")


def forest_entropy(selection: SubgraphSelection, tau: ForestMoments) -> float:
    """Entropy of the forest distribution with marginals ``tau``.

    Uses ``sum_v H(Y_v) - sum_{e in E'} I(Y_v; Y_w)``, which equals the rooted
    root-plus-conditionals decomposition on each tree.
    """
    h = -_xlogx(tau.node).sum()
    if len(selection.kept):
        ends = np.asarray(selection.kept_edges)
        pv = tau.node[ends[:, 0]][:, :, None]
        pw = tau.node[ends[:, 1]][:, None, :]
        p = tau.edge
        mi = np.where(p > 0, p * (np.log(np.maximum(p, EPS)) - np.log(np.maximum(pv, EPS))
                                  - np.log(np.maximum(pw, EPS))), 0.0)
        h -= mi.sum()
    return float(h)


# -- sampling -----------------------------------------------------------------

def _draw(probs: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    u = rng.random(probs.shape[:-1])
    x = (np.cumsum(probs, axis=-1) < u[..., None]).sum(axis=-1)
    return np.minimum(x, probs.shape[-1] - 1)


def _softmax(a: np.ndarray) -> np.ndarray:
    a = a - a.max(axis=-1, keepdims=True)
    e = np.exp(a)
    return e / e.sum(axis=-1, keepdims=True)


def sample_tree(sched: TreeSchedule, node_p: np.ndarray, edge_p: np.ndarray,
                rng: np.random.Generator, size: int = 1) -> np.ndarray:
    """Forward-filter / backward-sample ``size`` draws; returns ``(size, n)`` local states."""
    n = node_p.shape[0]
    res = tree_sum_product(sched, node_p, edge_p, marginals=False)
    up = node_p + res.inc
    x = np.empty((size, n), dtype=np.int64)
    x[:, 0] = _draw(np.broadcast_to(_softmax(up[0]), (size, up.shape[1])), rng)
    for lvl in sched.levels:
        # psi[u][x_parent, :] + upward belief of u
        logits = res.psi[lvl.nodes[None, :], x[:, lvl.parents]] + up[lvl.nodes][None]
        x[:, lvl.nodes] = _draw(_softmax(logits), rng)
    return x


def sample_forest(selection: SubgraphSelection, zeta, seed=None, size: int | None = None,
                  components=None) -> np.ndarray:
    """Exact draw(s) from the forest distribution at ``zeta``.

    Returns an ``(m,)`` configuration, or ``(size, m)`` when ``size`` is given.
    With ``components`` only those trees are sampled; other entries are -1.
    ``seed`` may be an int or a ``numpy.random.Generator``.
    """
    rng = np.random.default_rng(seed)
    m = selection.graph.vertex_count
    if isinstance(zeta, tuple):
        node_p, edge_p = (np.asarray(z, dtype=float) for z in zeta)
    else:
        zeta = np.asarray(zeta, dtype=float)
        node_p, edge_p = split_forest_vector(zeta, m, _infer_k(zeta.size, m, len(selection.kept)))
    scheds = forest_schedules(selection)
    which = range(len(scheds)) if components is None else components
    out = np.full((size or 1, m), -1, dtype=np.int64)
    for c in which:
        sched = scheds[c]
        out[:, sched.vertices] = sample_tree(sched, node_p[sched.vertices], edge_p, rng, size or 1)
    return out if size is not None else out[0]


# -- exact oracles for the full model -----------------------------------------

def brute_force(model: Model, max_bits: float = 20.0):
    """Exact ``(log Z, node marginals, edge marginals)`` by full enumeration."""
    m, k = model.graph.vertex_count, model.k
    if m * np.log2(k) > max_bits + 1e-9:
        raise IntractableError(f"brute force over {k}^{m} configurations refused")
    x = np.indices((k,) * m, dtype=np.int8).reshape(m, -1).T
    score = model.unary[np.arange(m), x].sum(axis=1)
    for e, (v, w) in enumerate(model.graph.edges):
        score += model.pairwise[e][x[:, v], x[:, w]]
    logz = float(logsumexp(score))
    p = np.exp(score - logz)
    node = np.stack([np.bincount(x[:, v], weights=p, minlength=k) for v in range(m)])
    edge = np.stack([
        np.bincount(x[:, v].astype(np.int64) * k + x[:, w], weights=p, minlength=k * k).reshape(k, k)
        for v, w in model.graph.edges
    ]) if model.graph.edge_count else np.zeros((0, k, k))
    return logz, node, edge


def min_degree_order(graph: Graph, keep=()) -> list[int]:
    adj = [set() for _ in range(graph.vertex_count)]
    for v, w in graph.edges:
        adj[v].add(w)
        adj[w].add(v)
    remaining = set(range(graph.vertex_count)) - set(keep)
    order = []
    while remaining:
        u = min(remaining, key=lambda v: (len(adj[v]), v))
        nbrs = adj[u]
        for a in nbrs:
            adj[a] |= nbrs - {a}
            adj[a].discard(u)
        order.append(u)
        remaining.discard(u)
    return order


def default_order(graph: Graph) -> list[int]:
    """Column-major sweep for square grids, min-degree otherwise."""
    n = int(round(graph.vertex_count ** 0.5))
    if n * n == graph.vertex_count and n > 1:
        from .graph_core import grid
        if graph == grid(n):
            return [r * n + c for c in range(n) for r in range(n)]
    return min_degree_order(graph)


def _eliminate(model: Model, order, max_states: int) -> list[tuple[tuple[int, ...], np.ndarray]]:
    k = model.k
    factors = [((v,), model.unary[v].copy()) for v in range(model.graph.vertex_count)]
    factors += [((v, w), model.pairwise[e].copy()) for e, (v, w) in enumerate(model.graph.edges)]
    for x in order:
        touching = [f for f in factors if x in f[0]]
        factors = [f for f in factors if x not in f[0]]
        scope = tuple(sorted({v for s, _ in touching for v in s}))
        if k ** len(scope) > max_states:
            raise IntractableError(f"elimination cluster of {k}^{len(scope)} states exceeds guard {max_states}")
        total = np.zeros((1,) * len(scope))
        for s, t in touching:
            shape = [k if v in s else 1 for v in scope]
            total = total + t.reshape(shape)
        ax = scope.index(x)
        factors.append((scope[:ax] + scope[ax + 1:], logsumexp(total, axis=ax)))
    return factors


def exact_log_partition(model: Model, order=None, marginals: bool = True, max_states: int = 2 ** 20):
    """Exact ``log Z`` by log-space variable elimination, plus node marginals.

    Node marginals come from one elimination per vertex that keeps that vertex
    last. Raises :class:`IntractableError` when an elimination cluster would
    exceed ``max_states`` joint states.
    """
    graph = model.graph
    if order is None:
        order = default_order(graph)
    order = list(order)
    if sorted(order) != list(range(graph.vertex_count)):
        raise ValueError("order must be a permutation of the vertices")
    logz = float(sum(np.sum(t) for _, t in _eliminate(model, order, max_states)))
    if not marginals:
        return logz, None
    node = np.empty((graph.vertex_count, model.k))
    for v in range(graph.vertex_count):
        rest = [u for u in order if u != v]
        tab = sum(t if s else np.full(model.k, float(t)) for s, t in _eliminate(model, rest, max_states))
        node[v] = np.exp(tab - logsumexp(tab))
    return logz, node
