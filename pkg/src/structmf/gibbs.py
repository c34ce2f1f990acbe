"""Block Gibbs sampling with the trees of a v-acyclic selection as blocks.

Given the rest of the configuration, a block's conditional is its own tree
model with each cross edge ``(a, b)`` folded into the unary potential of the
inside endpoint ``a`` as the table row/column selected by ``x_b``. Blocks are
visited in index order (systematic scan).

Selections with b-acyclic components are refused: an intra dropped edge puts
an extra pairwise factor inside the block and its conditional is no longer a
tree.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numba
import numpy as np

from .graph_core import ComponentDecomposition
from .model import Model
from .tree_inference import forest_schedules, sample_tree, tree_sum_product


class GibbsError(ValueError):
    pass


@dataclass
class GibbsState:
    x: np.ndarray
    rng: np.random.Generator
    sweep: int = 0

    @classmethod
    def start(cls, model: Model, seed=0) -> "GibbsState":
        rng = np.random.default_rng(seed)
        return cls(rng.integers(model.k, size=model.graph.vertex_count), rng)


@dataclass
class MarginalEstimate:
    node: np.ndarray      # (m, k) empirical frequencies
    edge: np.ndarray      # (|E|, k, k) empirical pair frequencies over graph edges
    samples: int
    burnin: int


def _require_v_acyclic(model: Model, decomposition: ComponentDecomposition) -> None:
    if decomposition.selection.graph != model.graph:
        raise GibbsError("decomposition is over a different graph")
    if not decomposition.is_v_acyclic:
        raise GibbsError("block Gibbs needs a v-acyclic selection; b-acyclic blocks have cyclic conditionals")


def block_params(model: Model, decomposition: ComponentDecomposition, x, c: int):
    """Conditional tree parameters of block ``c`` given ``x``: ``(local unary, kept-edge tables)``."""
    sel = decomposition.selection
    sched = forest_schedules(sel)[c]
    local = {v: i for i, v in enumerate(sched.vertices)}
    node_p = model.unary[sched.vertices].copy()
    for e in decomposition.components[c].cross_dropped:
        a, b = model.graph.edges[e]
        table = model.pairwise[e]
        if a in local:
            node_p[local[a]] += table[:, x[b]]
        else:
            node_p[local[b]] += table[x[a], :]
    return node_p, model.pairwise[list(sel.kept)].reshape(-1, model.k, model.k)


def block_conditional(model: Model, decomposition: ComponentDecomposition, x, c: int) -> np.ndarray:
    """Exact node marginals of block ``c`` given the rest of ``x``, in the block's schedule order."""
    _require_v_acyclic(model, decomposition)
    sched = forest_schedules(decomposition.selection)[c]
    return tree_sum_product(sched, *block_params(model, decomposition, x, c)).node


def block_kernel(model: Model, decomposition: ComponentDecomposition, state: GibbsState, c: int) -> GibbsState:
    _require_v_acyclic(model, decomposition)
    sched = forest_schedules(decomposition.selection)[c]
    node_p, edge_p = block_params(model, decomposition, state.x, c)
    state.x[sched.vertices] = sample_tree(sched, node_p, edge_p, state.rng)[0]
    return state


def sweep(model: Model, decomposition: ComponentDecomposition, state: GibbsState) -> GibbsState:
    for c in range(len(decomposition.components)):
        block_kernel(model, decomposition, state, c)
    state.sweep += 1
    return state


# -- compiled sampler for long runs ------------------------------------------------

@numba.njit(cache=True)
def _run(seed, x, sweeps, burnin, unary, order, parent, psi, block_ptr,
         boost_ptr, boost_other, boost_table, edges):
    np.random.seed(seed)
    k = unary.shape[1]
    m = unary.shape[0]
    node_counts = np.zeros((m, k))
    edge_counts = np.zeros((edges.shape[0], k, k))
    up = np.empty((order.shape[0], k))
    logits = np.empty(k)
    for it in range(sweeps):
        for blk in range(block_ptr.shape[0] - 1):
            lo, hi = block_ptr[blk], block_ptr[blk + 1]
            for i in range(lo, hi):
                v = order[i]
                for y in range(k):
                    up[i, y] = unary[v, y]
                for j in range(boost_ptr[v], boost_ptr[v + 1]):
                    xb = x[boost_other[j]]
                    for y in range(k):
                        up[i, y] += boost_table[j, y, xb]
            for i in range(hi - 1, lo, -1):
                p = parent[i]
                for xp in range(k):
                    mx = -np.inf
                    for y in range(k):
                        val = psi[i, xp, y] + up[i, y]
                        if val > mx:
                            mx = val
                    s = 0.0
                    for y in range(k):
                        s += np.exp(psi[i, xp, y] + up[i, y] - mx)
                    up[p, xp] += mx + np.log(s)
            for i in range(lo, hi):
                mx = -np.inf
                for y in range(k):
                    logits[y] = up[i, y]
                    if i > lo:
                        logits[y] += psi[i, x[order[parent[i]]], y]
                    if logits[y] > mx:
                        mx = logits[y]
                tot = 0.0
                for y in range(k):
                    logits[y] = np.exp(logits[y] - mx)
                    tot += logits[y]
                u = np.random.random() * tot
                acc = 0.0
                pick = k - 1
                for y in range(k):
                    acc += logits[y]
                    if u < acc:
                        pick = y
                        break
                x[order[i]] = pick
        if it >= burnin:
            for v in range(m):
                node_counts[v, x[v]] += 1.0
            for e in range(edges.shape[0]):
                edge_counts[e, x[edges[e, 0]], x[edges[e, 1]]] += 1.0
    return node_counts, edge_counts


def _flatten(model: Model, decomposition: ComponentDecomposition):
    sel = decomposition.selection
    k = model.k
    kept_tables = model.pairwise[list(sel.kept)].reshape(-1, k, k)
    order, parent, psi, ptr = [], [], [], [0]
    for sched in forest_schedules(sel):
        base = len(order)
        order.extend(sched.vertices.tolist())
        par = np.full(len(sched.vertices), -1)
        tabs = np.zeros((len(sched.vertices), k, k))
        for lvl in sched.levels:
            par[lvl.nodes] = base + lvl.parents
            t = kept_tables[lvl.edges]
            tabs[lvl.nodes] = np.where(lvl.flip, t.transpose(0, 2, 1), t)
        parent.extend(par.tolist())
        psi.append(tabs)
        ptr.append(len(order))

    # boost_table[j] is indexed [state of v, state of the outside neighbour]
    per_vertex: list[list[tuple[int, np.ndarray]]] = [[] for _ in range(model.graph.vertex_count)]
    for e in decomposition.dropped_cross:
        a, b = model.graph.edges[e]
        per_vertex[a].append((b, model.pairwise[e]))
        per_vertex[b].append((a, model.pairwise[e].T))
    bptr = np.cumsum([0] + [len(p) for p in per_vertex])
    other = np.array([o for p in per_vertex for o, _ in p], dtype=np.int64)
    tables = np.array([t for p in per_vertex for _, t in p], dtype=float).reshape(-1, k, k)
    edges = np.asarray(model.graph.edges, dtype=np.int64).reshape(-1, 2)
    return (np.asarray(order, dtype=np.int64), np.asarray(parent, dtype=np.int64),
            np.concatenate(psi), np.asarray(ptr, dtype=np.int64), bptr.astype(np.int64),
            other, tables, edges)


def estimate_marginals(model: Model, decomposition: ComponentDecomposition, sweeps: int,
                       burnin: int = 0, seed: int = 0) -> MarginalEstimate:
    """Empirical node and edge-pair frequencies over the post-burn-in sweeps.

    Runs the same systematic-scan kernel as :func:`sweep`, compiled, with its
    own seeded generator (streams differ from the numpy-based kernel).
    """
    _require_v_acyclic(model, decomposition)
    if not sweeps > burnin >= 0:
        raise GibbsError("need sweeps > burnin >= 0")
    x0 = np.random.default_rng(seed).integers(model.k, size=model.graph.vertex_count)
    node, edge = _run(seed, x0.astype(np.int64), sweeps, burnin, np.ascontiguousarray(model.unary),
                      *_flatten(model, decomposition))
    n = sweeps - burnin
    return MarginalEstimate(node / n, edge / n, n, burnin)


def write_marginals(est: MarginalEstimate, path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["vertex", "state", "frequency"])
        for v, row in enumerate(est.node):
            for x, p in enumerate(row):
                w.writerow([v, x, f"{p:.12g}"])
