"""Structured mean-field optimisation over an acyclic edge selection.

The optimisation variable is ``tau``, the node and kept-edge marginals of the
forest family. The objective is

    G(tau) = <omega, tau> + <vartheta, Gamma(tau)> + H(tau)

where ``Gamma`` maps ``tau`` to the expected indicator statistics of the
dropped edges. Stationary points satisfy ``tau = grad A(omega + J(tau) vartheta)``
with ``J`` the Jacobian of ``Gamma`` (rows ``F'``, columns ``F \\ F'``).

Free-variable convention for ``Gamma`` (which fixes ``J``):

* cross edge ``(a, b)`` (endpoints in different trees):
  ``Gamma[s, t] = tau_node[a, s] * tau_node[b, t]``;
* intra edge with tree path ``a = p0, ..., pk = b``:
  ``Gamma = T_1 @ C_2 @ ... @ C_k`` where ``T_i`` is the pair table of path
  edge ``(p_{i-1}, p_i)`` oriented along the path and ``C_i`` is ``T_i`` divided
  by its row sums. Node marginals never appear; they are row sums of edge
  coordinates.
"""

from __future__ import annotations

import csv
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from .graph_core import ComponentDecomposition, Kind, SubgraphSelection, TreePath, classify, unique_path
from .model import Model, SplitParams, split_params
from .tree_inference import (
    EPS,
    ForestMoments,
    forest_entropy,
    forest_schedules,
    sum_product,
    tree_sum_product,
    uniform_moments,
)


@dataclass(frozen=True)
class IntraEdge:
    """A dropped edge closing a cycle inside one tree, with its tree path."""

    position: int          # index into selection.dropped / vartheta tables
    edge: int              # index into graph.edges
    path: TreePath
    kept_pos: np.ndarray   # positions in selection.kept of the path edges
    flip: np.ndarray       # (L, 1, 1): path runs against the canonical orientation


@dataclass(frozen=True)
class CrossBlock:
    """Cross dropped edges touching one component, oriented from inside it."""

    local: np.ndarray      # local index (schedule order) of the endpoint in c
    other: np.ndarray      # global id of the endpoint outside c
    theta: np.ndarray      # (n, k, k), rows index the state of the inside endpoint


class MFProblem:
    """Everything about a (model, selection) pair that does not change during a solve."""

    def __init__(self, model: Model, selection: SubgraphSelection):
        if selection.graph != model.graph:
            raise ValueError("selection is over a different graph")
        self.model = model
        self.selection = selection
        self.decomposition: ComponentDecomposition = classify(selection)
        self.split: SplitParams = split_params(model, selection)
        self.k = k = model.k
        self.m = m = model.graph.vertex_count
        self.omega_node = model.unary.copy()
        self.omega_edge = model.pairwise[list(selection.kept)].reshape(-1, k, k).copy()
        self.vartheta = model.pairwise[list(selection.dropped)].reshape(-1, k, k).copy()
        self.schedules = forest_schedules(selection)

        edges = model.graph.edges
        dropped_pos = {e: p for p, e in enumerate(selection.dropped)}
        cross = [dropped_pos[e] for e in self.decomposition.dropped_cross]
        self.cross_positions = np.asarray(cross, dtype=int)
        ends = np.asarray([edges[selection.dropped[p]] for p in cross], dtype=int).reshape(-1, 2)
        self.cross_a, self.cross_b = ends[:, 0], ends[:, 1]

        self.intra: dict[int, list[IntraEdge]] = {}
        for c, group in self.decomposition.dropped_intra.items():
            self.intra[c] = []
            for e in group:
                path = unique_path(self.decomposition, e)
                verts = np.asarray(path.vertices)
                self.intra[c].append(IntraEdge(
                    dropped_pos[e], e, path, np.asarray(path.edges),
                    (verts[:-1] > verts[1:])[:, None, None]))
        self.intra_edges = [ie for c in sorted(self.intra) for ie in self.intra[c]]
        self.paths = {ie.edge: ie.path for ie in self.intra_edges}

        self.cross_blocks = []
        label = self.decomposition.label
        for c, sched in enumerate(self.schedules):
            local_of = {v: i for i, v in enumerate(sched.vertices)}
            loc, oth, th = [], [], []
            for p in cross:
                a, b = edges[selection.dropped[p]]
                if label[a] == c:
                    loc.append(local_of[a]), oth.append(b), th.append(self.vartheta[p])
                elif label[b] == c:
                    loc.append(local_of[b]), oth.append(a), th.append(self.vartheta[p].T)
            self.cross_blocks.append(CrossBlock(
                np.asarray(loc, dtype=int), np.asarray(oth, dtype=int),
                np.asarray(th, dtype=float).reshape(-1, k, k)))

    @property
    def kinds(self) -> list[Kind]:
        return [c.kind for c in self.decomposition.components]

    def flatten(self, node, edge) -> np.ndarray:
        return np.concatenate([np.asarray(node).ravel(), np.asarray(edge).ravel()])


# -- embedding ----------------------------------------------------------------

def _oriented(tables: np.ndarray, flip: np.ndarray) -> np.ndarray:
    return np.where(flip, tables.transpose(0, 2, 1), tables)


def path_tables(tau: ForestMoments, ie: IntraEdge) -> np.ndarray:
    """Pair tables of the path edges, each oriented ``(p_{i-1}, p_i)``."""
    return _oriented(tau.edge[ie.kept_pos], ie.flip)


def telescoping_gamma(tables: np.ndarray) -> np.ndarray:
    """``P(Y_a = s, Y_b = t)`` as ``T_1 @ C_2 @ ... @ C_k``."""
    out = tables[0]
    for t in tables[1:]:
        out = out @ (t / np.maximum(t.sum(axis=1, keepdims=True), EPS))
    return out


def gamma(problem: MFProblem, tau: ForestMoments) -> np.ndarray:
    """Expected dropped-edge statistics, shape ``(|E \\ E'|, k, k)``."""
    out = np.empty_like(problem.vartheta)
    if len(problem.cross_positions):
        out[problem.cross_positions] = tau.node[problem.cross_a][:, :, None] * tau.node[problem.cross_b][:, None, :]
    for ie in problem.intra_edges:
        out[ie.position] = telescoping_gamma(path_tables(tau, ie))
    return out


def objective(problem: MFProblem, tau: ForestMoments) -> float:
    """Mean-field lower bound ``G(tau)`` at a consistent ``tau``."""
    val = float(np.vdot(problem.omega_node, tau.node) + np.vdot(problem.omega_edge, tau.edge))
    if problem.vartheta.size:
        val += float(np.vdot(problem.vartheta, gamma(problem, tau)))
    return val + forest_entropy(problem.selection, tau)


# -- auxiliary chains ----------------------------------------------------------

@dataclass
class ChainBatch:
    """The ``k * k`` auxiliary chains of one intra edge, batched over ``(s, t)``.

    The chain lives on the interior path vertices ``p_1..p_{L-1}``. Its
    potentials are ``T_1[s, y]`` on ``p_1``, ``C_L[y, t]`` on ``p_{L-1}`` and
    ``C_i`` on the chain edge ``(p_{i-1}, p_i)``; ``Z[s, t]`` is then exactly the
    telescoping value of ``Gamma[s, t]``.
    """

    intra: IntraEdge
    tables: np.ndarray     # (L, k, k) oriented path tables
    rows: np.ndarray       # (L, k) row sums of tables
    Z: np.ndarray          # (k, k)
    node_mu: np.ndarray    # (k, k, L - 1, k)
    pair_mu: np.ndarray    # (k, k, L - 2, k, k)


def _chain_batch(ie: IntraEdge, tau: ForestMoments) -> ChainBatch:
    tables = path_tables(tau, ie)
    L, k = tables.shape[0], tables.shape[1]
    n = L - 1
    rows = tables.sum(axis=2)
    cond = tables / np.maximum(rows, EPS)[:, :, None]

    # unary potentials u[j, s, t, y] on chain node j (= path vertex p_{j+1})
    u = np.ones((n, k, k, k))
    u[0] *= tables[0][:, None, :]
    u[n - 1] *= cond[L - 1].T[None, :, :]

    alpha = np.empty((n, k, k, k))
    scale = np.empty((n, k, k))
    a = u[0]
    for j in range(n):
        if j:
            a = (alpha[j - 1] @ cond[j]) * u[j]
        c = a.sum(axis=-1)
        scale[j] = c
        alpha[j] = a / np.where(c > 0, c, 1.0)[..., None]
    Z = np.prod(scale, axis=0)

    beta = np.ones((n, k, k, k))
    for j in range(n - 1, 0, -1):
        c = np.where(scale[j] > 0, scale[j], 1.0)[..., None]
        beta[j - 1] = ((u[j] * beta[j]) @ cond[j].T) / c
    node_mu = alpha * beta
    pair_mu = np.empty((n - 1, k, k, k, k))
    for j in range(1, n):
        c = np.where(scale[j] > 0, scale[j], 1.0)[..., None, None]
        pair_mu[j - 1] = (alpha[j - 1][..., :, None] * cond[j] * (u[j] * beta[j])[..., None, :]) / c
    return ChainBatch(ie, tables, rows, Z, node_mu.transpose(1, 2, 0, 3), pair_mu.transpose(1, 2, 0, 3, 4))


def _chain_jacobian(batch: ChainBatch) -> np.ndarray:
    """Closed-form ``dGamma[s, t] / dT_i[x, y]``, shape ``(k, k, L, k, k)``.

    Cases, for path edge ``(v, w) = (p_{i-1}, p_i)``:

    * first edge (``v = p_0``): ``Z mu_{p_1}(y) 1[x = s] / T_1[x, y]``;
    * last edge (``v = p_{L-1}``): ``Z mu_{p_{L-1}}(x) (1[y = t] / T_L[x, y] - 1 / r_L[x])``;
    * otherwise: ``Z (mu_{(v, w)}(x, y) / T_i[x, y] - mu_v(x) / r_i[x])``.

    With ``L = 2`` the single interior vertex carries both boundary
    potentials and the first/last cases apply to distinct edges.

    The denominators are row sums ``r_i[x] = sum_y T_i[x, y]``, not node
    marginals. The two agree on consistent moments, but only the row sums
    give the derivative when the edge coordinates vary independently, which
    is what the finite-difference check measures.
    """
    T = np.maximum(batch.tables, EPS)
    r = np.maximum(batch.rows, EPS)
    Z = batch.Z[:, :, None, None]
    L, k = T.shape[0], T.shape[1]
    delta = np.eye(k)
    J = np.empty((k, k, L, k, k))
    J[:, :, 0] = Z * delta[:, None, :, None] * batch.node_mu[:, :, 0][:, :, None, :] / T[0]
    last = batch.node_mu[:, :, L - 2][:, :, :, None]
    J[:, :, L - 1] = Z * last * (delta[None, :, None, :] / T[L - 1] - 1.0 / r[L - 1][:, None])
    for i in range(1, L - 1):
        J[:, :, i] = Z * (batch.pair_mu[:, :, i - 1] / T[i]
                          - batch.node_mu[:, :, i - 1][:, :, :, None] / r[i][:, None])
    return J


@dataclass
class AuxiliaryChain:
    """Auxiliary chain family for one dropped coordinate ``((a, b), (s, t))``."""

    edge: int
    s: int
    t: int
    path: TreePath
    unary: np.ndarray      # (L - 1, k) log-potentials on p_1..p_{L-1}
    pairwise: np.ndarray   # (L - 2, k, k) log-potentials on chain edges
    Z: float
    node_mu: np.ndarray    # (L - 1, k)
    pair_mu: np.ndarray    # (L - 2, k, k)

    @property
    def log_partition(self) -> float:
        return float(np.log(self.Z)) if self.Z > 0 else -np.inf


def _intra_edge(problem: MFProblem, edge) -> IntraEdge:
    if not isinstance(edge, (int, np.integer)):
        edge = problem.model.graph.index_of(*edge)
    for ie in problem.intra_edges:
        if ie.edge == edge:
            return ie
    raise ValueError(f"edge {edge} is not an intra-component dropped edge")


def build_auxiliary_chain(problem: MFProblem, tau: ForestMoments, edge, s: int, t: int) -> AuxiliaryChain:
    ie = _intra_edge(problem, edge)
    batch = _chain_batch(ie, tau)
    tables, rows = batch.tables, batch.rows
    L = tables.shape[0]
    with np.errstate(divide="ignore"):
        logc = np.log(tables) - np.log(np.maximum(rows, EPS))[:, :, None]
        unary = np.zeros((L - 1, problem.k))
        unary[0] += np.log(tables[0][s])
        unary[L - 2] += logc[L - 1][:, t]
    return AuxiliaryChain(ie.edge, s, t, ie.path, unary, logc[1:L - 1].copy(), float(batch.Z[s, t]),
                          batch.node_mu[s, t].copy(), batch.pair_mu[s, t].copy())


def jacobian_b_contribution(problem: MFProblem, tau: ForestMoments, chain: AuxiliaryChain) -> np.ndarray:
    """``vartheta_g * J[:, g]`` on the path-edge coordinates, ``(|E'|, k, k)``.

    Unary coordinates get nothing: ``Gamma_g`` of an intra edge has no
    node-marginal arguments.
    """
    ie = _intra_edge(problem, chain.edge)
    batch = _chain_batch(ie, tau)
    col = _chain_jacobian(batch)[chain.s, chain.t]
    out = np.zeros_like(problem.omega_edge)
    np.add.at(out, ie.kept_pos, problem.vartheta[ie.position, chain.s, chain.t] * _oriented(col, ie.flip))
    return out


def _intra_product(problem: MFProblem, tau: ForestMoments, intra_edges, out: np.ndarray) -> None:
    for ie in intra_edges:
        J = _chain_jacobian(_chain_batch(ie, tau))
        contrib = np.einsum("st,stlxy->lxy", problem.vartheta[ie.position], J)
        np.add.at(out, ie.kept_pos, _oriented(contrib, ie.flip))


def _cross_field(problem: MFProblem, tau_node: np.ndarray, c: int) -> np.ndarray:
    """Cross-edge part of ``J vartheta`` on the unary coordinates of component c (local order)."""
    blk = problem.cross_blocks[c]
    n = len(problem.schedules[c].vertices)
    field = np.zeros((n, problem.k))
    if len(blk.local):
        contrib = np.einsum("nst,nt->ns", blk.theta, tau_node[blk.other])
        if n == 1:
            field[0] = contrib.sum(axis=0)
        else:
            np.add.at(field, blk.local, contrib)
    return field


def jacobian_v_contribution(problem: MFProblem, tau: ForestMoments, c: int) -> tuple[np.ndarray, np.ndarray]:
    """Cross-edge part of ``J vartheta`` restricted to ``F'^(c)`` as full-size (node, edge) arrays.

    Each cross edge ``g = ((a, b), (s, t))`` with ``a`` in c adds
    ``vartheta_g * tau[b, t]`` at ``(a, s)``; only ``tau`` outside c is read.
    """
    node = np.zeros_like(problem.omega_node)
    node[problem.schedules[c].vertices] = _cross_field(problem, tau.node, c)
    return node, np.zeros_like(problem.omega_edge)


def jacobian_product(problem: MFProblem, tau: ForestMoments) -> tuple[np.ndarray, np.ndarray]:
    """Full ``J(tau) vartheta`` as (node, edge) arrays."""
    node = np.zeros_like(problem.omega_node)
    for c, sched in enumerate(problem.schedules):
        node[sched.vertices] += _cross_field(problem, tau.node, c)
    edge = np.zeros_like(problem.omega_edge)
    _intra_product(problem, tau, problem.intra_edges, edge)
    return node, edge


def materialize_jacobian(problem: MFProblem, tau: ForestMoments) -> sp.csr_matrix:
    """Sparse ``J`` with rows in ``F'`` order and columns in ``F \\ F'`` order."""
    m, k = problem.m, problem.k
    kk = k * k
    rows, cols, vals = [], [], []
    for idx, p in enumerate(problem.cross_positions):
        a, b = problem.cross_a[idx], problem.cross_b[idx]
        for s in range(k):
            for t in range(k):
                col = p * kk + s * k + t
                rows += [a * k + s, b * k + t]
                cols += [col, col]
                vals += [tau.node[b, t], tau.node[a, s]]
    for ie in problem.intra_edges:
        J = _chain_jacobian(_chain_batch(ie, tau))
        for s in range(k):
            for t in range(k):
                col = ie.position * kk + s * k + t
                block = _oriented(J[s, t], ie.flip)
                for pos, tab in zip(ie.kept_pos, block):
                    base = m * k + pos * kk
                    rows.extend(base + np.arange(kk))
                    cols.extend([col] * kk)
                    vals.extend(tab.ravel())
    shape = (m * k + len(problem.selection.kept) * kk, problem.vartheta.size)
    return sp.coo_matrix((vals, (rows, cols)), shape=shape).tocsr()


def fd_jacobian_oracle(problem: MFProblem, tau: ForestMoments, h: float = 1e-5,
                       max_entries: int = 10 ** 6) -> np.ndarray:
    """Dense central-difference Jacobian of :func:`gamma` in the free-variable convention."""
    x0 = tau.flat()
    d_kept, d_drop = x0.size, problem.vartheta.size
    if d_kept * d_drop > max_entries:
        raise ValueError(f"dense oracle of {d_kept} x {d_drop} refused")
    J = np.empty((d_kept, d_drop))
    for j in range(d_kept):
        x = x0.copy()
        x[j] += h
        plus = gamma(problem, ForestMoments.from_flat(x, problem.m, problem.k)).ravel()
        x[j] -= 2 * h
        minus = gamma(problem, ForestMoments.from_flat(x, problem.m, problem.k)).ravel()
        J[j] = (plus - minus) / (2 * h)
    return J


# -- updates and solver ----------------------------------------------------------

@dataclass
class MFState:
    tau: ForestMoments
    sweep_count: int = 0
    objective_trace: list[float] = field(default_factory=list)
    elapsed_ms: list[float] = field(default_factory=list)


@dataclass(frozen=True)
class SolveOptions:
    tol: float = 1e-8
    max_sweeps: int = 10000
    damping: float = 0.5
    init: str = "perturbed"
    seed: int = 0


@dataclass
class MFSolution:
    tau: ForestMoments
    lower_bound: float
    converged: bool
    sweeps: int
    objective_trace: list[float]
    elapsed_ms: list[float]


def block_update_v(problem: MFProblem, state: MFState, c: int) -> ForestMoments:
    """Exact maximisation of ``G`` over the block of a v-acyclic component, in place."""
    sched = problem.schedules[c]
    if len(sched.vertices) == 1:
        # isolated vertex: the tree pass reduces to a softmax of the effective field
        v = sched.vertices[0]
        blk = problem.cross_blocks[c]
        f = problem.omega_node[v] + np.einsum("nst,nt->s", blk.theta, state.tau.node[blk.other])
        e = np.exp(f - f.max())
        state.tau.node[v] = e / e.sum()
        return state.tau
    node_p = problem.omega_node[sched.vertices] + _cross_field(problem, state.tau.node, c)
    res = tree_sum_product(sched, node_p, problem.omega_edge)
    state.tau.node[sched.vertices] = res.node
    if len(sched.edge_positions):
        state.tau.edge[sched.edge_positions] = res.edge
    return state.tau


def fixed_point_update_b(problem: MFProblem, state: MFState, damping: float = 0.5,
                         components=None) -> ForestMoments:
    """Damped ``tau <- grad A(omega + J(tau) vartheta)`` on b-acyclic components, in place.

    All selected components use ``J`` evaluated at the incoming ``tau``; the new
    moments are blended as ``(1 - damping) * old + damping * new``.
    """
    if not 0 < damping <= 1:
        raise ValueError("damping must lie in (0, 1]")
    if components is None:
        components = [c for c, kind in enumerate(problem.kinds) if kind is Kind.B_ACYCLIC]
    old = state.tau.copy()
    updates = []
    for c in components:
        sched = problem.schedules[c]
        node_p = problem.omega_node[sched.vertices] + _cross_field(problem, old.node, c)
        edge_p = problem.omega_edge.copy()
        _intra_product(problem, old, problem.intra.get(c, ()), edge_p)
        updates.append((sched, tree_sum_product(sched, node_p, edge_p)))
    for sched, res in updates:
        v, e = sched.vertices, sched.edge_positions
        state.tau.node[v] = (1 - damping) * old.node[v] + damping * res.node
        if len(e):
            state.tau.edge[e] = (1 - damping) * old.edge[e] + damping * res.edge
    return state.tau


def initial_moments(problem: MFProblem, init: str = "perturbed", seed=0) -> ForestMoments:
    """``grad A(omega + eta)`` with ``eta ~ U[-0.01, 0.01]``, or exactly uniform marginals."""
    if init == "uniform":
        return uniform_moments(problem.selection, problem.k)
    if init != "perturbed":
        raise ValueError(f"unknown init {init!r}")
    rng = np.random.default_rng(seed)
    node = problem.omega_node + rng.uniform(-0.01, 0.01, problem.omega_node.shape)
    edge = problem.omega_edge + rng.uniform(-0.01, 0.01, problem.omega_edge.shape)
    return sum_product(problem.selection, (node, edge)).moments


def sweep(problem: MFProblem, state: MFState, damping: float = 0.5) -> None:
    """One round-robin pass over components in index order (Gauss-Seidel)."""
    for c, kind in enumerate(problem.kinds):
        if kind is Kind.V_ACYCLIC:
            block_update_v(problem, state, c)
        else:
            fixed_point_update_b(problem, state, damping, components=[c])
    state.sweep_count += 1


def solve(problem: MFProblem, options: SolveOptions | None = None, **overrides) -> MFSolution:
    """Run sweeps until ``|G_t - G_{t-1}| <= tol`` or ``max_sweeps``.

    The trace starts with the objective at the initial point (sweep 0);
    ``elapsed_ms`` is cumulative wall-clock time since the start of the solve.
    """
    opts = options or SolveOptions()
    if overrides:
        opts = SolveOptions(**{**opts.__dict__, **overrides})
    start = time.perf_counter()
    state = MFState(initial_moments(problem, opts.init, opts.seed))
    state.objective_trace.append(objective(problem, state.tau))
    state.elapsed_ms.append((time.perf_counter() - start) * 1e3)
    converged = False
    while state.sweep_count < opts.max_sweeps:
        sweep(problem, state, opts.damping)
        state.objective_trace.append(objective(problem, state.tau))
        state.elapsed_ms.append((time.perf_counter() - start) * 1e3)
        if abs(state.objective_trace[-1] - state.objective_trace[-2]) <= opts.tol:
            converged = True
            break
    return MFSolution(state.tau, state.objective_trace[-1], converged, state.sweep_count,
                      state.objective_trace, state.elapsed_ms)


def stationarity_residual(problem: MFProblem, tau: ForestMoments) -> float:
    """``max |tau - grad A(omega + J(tau) vartheta)|``."""
    jn, je = jacobian_product(problem, tau)
    new = sum_product(problem.selection, (problem.omega_node + jn, problem.omega_edge + je)).moments
    return float(max(np.abs(new.node - tau.node).max(), np.abs(new.edge - tau.edge).max(initial=0.0)))


def write_trace(solution: MFSolution, path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["sweep", "objective", "elapsed_ms"])
        for i, (g, ms) in enumerate(zip(solution.objective_trace, solution.elapsed_ms)):
            w.writerow([i, f"{g:.12g}", f"{ms:.12g}"])
