"""Node clustering: a self-contained multilevel partitioner, a random baseline,
partition quality statistics and the partition text format.

The multilevel scheme follows the usual METIS recipe:

1. coarsen by heavy-edge matching until the graph has at most
   ``max(2c, 100)`` vertices,
2. grow ``c`` regions greedily on the coarsest graph (several trials),
3. project back level by level, running boundary FM refinement at each level,
4. rebalance at the finest level if the soft tolerance is violated.
"""

from __future__ import annotations

import heapq
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from .data import write_atomic
from .sparse import GraphInputError, SparseMatrix

SOFT_BALANCE = 1.05
HARD_BALANCE = 1.3


@dataclass(frozen=True)
class Partition:
    n_clusters: int
    assignment: np.ndarray
    clusters: tuple

    @classmethod
    def from_assignment(cls, assignment, n_clusters: int | None = None) -> Partition:
        assignment = np.asarray(assignment, dtype=np.int64)
        if n_clusters is None:
            n_clusters = int(assignment.max()) + 1 if len(assignment) else 0
        if len(assignment) and (assignment.min() < 0 or assignment.max() >= n_clusters):
            raise GraphInputError("cluster id out of range")
        order = np.argsort(assignment, kind="stable")
        counts = np.bincount(assignment, minlength=n_clusters)
        if np.any(counts == 0):
            empty = int(np.flatnonzero(counts == 0)[0])
            raise GraphInputError(f"cluster {empty} is empty")
        clusters = tuple(np.split(order, np.cumsum(counts)[:-1]))
        return cls(n_clusters, assignment, clusters)

    @property
    def n_nodes(self) -> int:
        return len(self.assignment)

    def sizes(self) -> np.ndarray:
        return np.bincount(self.assignment, minlength=self.n_clusters)


@dataclass
class PartitionQuality:
    edge_cut: int
    within_edges: int
    within_fraction: float
    balance: float
    label_entropy: list | None = None

    def to_dict(self) -> dict:
        return {
            "edge_cut": self.edge_cut,
            "within_edges": self.within_edges,
            "within_fraction": self.within_fraction,
            "balance": self.balance,
            "label_entropy": self.label_entropy,
        }


def _check_c(n: int, c: int):
    if c < 1:
        raise GraphInputError(f"number of clusters must be >= 1, got {c}")
    if c > n:
        raise GraphInputError(f"number of clusters {c} exceeds number of nodes {n}")


def random_partition(n: int, c: int, seed: int) -> Partition:
    """Uniform random assignment; empty clusters take one node from the largest."""
    _check_c(n, c)
    rng = np.random.default_rng(seed)
    assign = rng.integers(0, c, size=n)
    counts = np.bincount(assign, minlength=c)
    for empty in np.flatnonzero(counts == 0):
        donor = int(np.argmax(counts))
        node = int(np.flatnonzero(assign == donor)[0])
        assign[node] = empty
        counts[donor] -= 1
        counts[empty] += 1
    return Partition.from_assignment(assign, c)


def entropy(counts) -> float:
    """Shannon entropy (nats) of a histogram."""
    counts = np.asarray(counts, dtype=np.float64)
    total = counts.sum()
    if total <= 0:
        return 0.0
    q = counts[counts > 0] / total
    return float(-(q * np.log(q)).sum())


def label_histogram(labels, nodes=None) -> np.ndarray:
    """Label counts; ``labels`` is an int vector or a 0/1 multilabel matrix."""
    labels = np.asarray(labels)
    if nodes is not None:
        labels = labels[np.asarray(nodes, dtype=np.int64)]
    if labels.ndim == 2:
        return labels.sum(axis=0)
    return np.bincount(labels.astype(np.int64)) if len(labels) else np.zeros(0)


def quality(a: SparseMatrix, p: Partition, labels=None) -> PartitionQuality:
    if len(p.assignment) != a.n_rows:
        raise GraphInputError(
            f"partition covers {len(p.assignment)} nodes but graph has {a.n_rows}"
        )
    rows = a.row_ids()
    upper = rows < a.col_indices
    same = p.assignment[rows[upper]] == p.assignment[a.col_indices[upper]]
    within = int(same.sum())
    cut = int((~same).sum())
    total = within + cut
    ent = None
    if labels is not None:
        ent = [entropy(label_histogram(labels, nodes)) for nodes in p.clusters]
    return PartitionQuality(
        edge_cut=cut,
        within_edges=within,
        within_fraction=within / total if total else 1.0,
        balance=float(p.sizes().max() / (p.n_nodes / p.n_clusters)),
        label_entropy=ent,
    )


# ---------------------------------------------------------------- multilevel


@dataclass
class _Graph:
    """Weighted graph used internally by the partitioner."""

    adj: sp.csr_matrix          # symmetric, zero diagonal, integer-valued weights
    vwgt: np.ndarray            # vertex weights (number of collapsed fine nodes)
    self_weight: np.ndarray     # edge weight collapsed inside each vertex

    @property
    def n(self) -> int:
        return self.adj.shape[0]

    def edge_weight(self) -> float:
        return float(self.adj.sum()) / 2.0

    def lists(self):
        return (self.adj.indptr.tolist(), self.adj.indices.tolist(),
                self.adj.data.tolist())


@dataclass
class CoarseningLevel:
    n_nodes: int
    edge_weight: float
    collapsed_weight: float


@dataclass
class MultilevelTrace:
    levels: list = field(default_factory=list)
    refine_history: list = field(default_factory=list)   # per level: cuts after each pass
    rebalanced: bool = False


def edge_cut_of(adj: sp.csr_matrix, part) -> float:
    coo = adj.tocoo()
    part = np.asarray(part)
    mask = part[coo.row] != part[coo.col]
    return float(coo.data[mask].sum()) / 2.0


def _heavy_edge_matching(g: _Graph, rng, max_vwgt: float) -> np.ndarray:
    xadj, adjncy, wgt = g.lists()
    vwgt = g.vwgt.tolist()
    n = g.n
    match = [-1] * n
    for u in rng.permutation(n).tolist():
        if match[u] != -1:
            continue
        best, best_w = -1, -1.0
        for k in range(xadj[u], xadj[u + 1]):
            v = adjncy[k]
            # columns are ascending, so strict ">" keeps the lowest id on ties
            if match[v] == -1 and v != u and wgt[k] > best_w and vwgt[u] + vwgt[v] <= max_vwgt:
                best, best_w = v, wgt[k]
        if best == -1:
            match[u] = u
        else:
            match[u] = best
            match[best] = u
    cmap = np.full(n, -1, dtype=np.int64)
    nc = 0
    for u in range(n):
        if cmap[u] == -1:
            cmap[u] = nc
            cmap[match[u]] = nc
            nc += 1
    return cmap


def _contract(g: _Graph, cmap: np.ndarray) -> _Graph:
    nc = int(cmap.max()) + 1
    proj = sp.csr_matrix((np.ones(g.n), (np.arange(g.n), cmap)), shape=(g.n, nc))
    c = (proj.T @ g.adj @ proj).tocsr()
    internal = c.diagonal() / 2.0
    c.setdiag(0)
    c.eliminate_zeros()
    c.sort_indices()
    vwgt = np.bincount(cmap, weights=g.vwgt, minlength=nc)
    self_weight = np.bincount(cmap, weights=g.self_weight, minlength=nc) + internal
    return _Graph(c, vwgt, self_weight)


class _Refiner:
    """Boundary k-way FM refinement with rollback to the best prefix of moves."""

    def __init__(self, g: _Graph, c: int, max_pw: float, max_stall: int = 100):
        self.g = g
        self.c = c
        self.max_pw = max_pw
        self.max_stall = max_stall
        self.xadj, self.adjncy, self.wgt = g.lists()
        self.vwgt = g.vwgt.tolist()

    def _connectivity(self, part):
        conn = []
        for u in range(self.g.n):
            d = {}
            for k in range(self.xadj[u], self.xadj[u + 1]):
                p = part[self.adjncy[k]]
                d[p] = d.get(p, 0.0) + self.wgt[k]
            conn.append(d)
        return conn

    def _best_move(self, u, part, conn, pw):
        own = part[u]
        cu = conn[u]
        w = self.vwgt[u]
        if pw[own] - w <= 0:
            return None
        base = cu.get(own, 0.0)
        best = None
        for p, wp in cu.items():
            if p == own or pw[p] + w > self.max_pw:
                continue
            key = (wp - base, -pw[p], -p)
            if best is None or key > best[0]:
                best = (key, p)
        if best is None:
            return None
        return best[0][0], best[1]

    def _imbalance(self, pw):
        return max(pw)

    def run_pass(self, part: list) -> tuple[list, float, float]:
        """One FM pass; returns (part, cut_before, cut_after)."""
        pw = [0.0] * self.c
        for u, p in enumerate(part):
            pw[p] += self.vwgt[u]
        conn = self._connectivity(part)
        cut = sum(w for u in range(self.g.n) for p, w in conn[u].items() if p != part[u]) / 2.0
        start_cut = cut
        heap = []
        for u in range(self.g.n):
            if len(conn[u]) > 1 or (conn[u] and part[u] not in conn[u]):
                mv = self._best_move(u, part, conn, pw)
                if mv is not None:
                    heapq.heappush(heap, (-mv[0], u, mv[1]))
        locked = [False] * self.g.n
        moves = []
        best_cut, best_len, best_imb = cut, 0, self._imbalance(pw)
        while heap:
            neg_gain, u, to = heapq.heappop(heap)
            if locked[u]:
                continue
            mv = self._best_move(u, part, conn, pw)
            if mv is None:
                continue
            if mv[0] != -neg_gain or mv[1] != to:
                heapq.heappush(heap, (-mv[0], u, mv[1]))
                continue
            gain, to = mv
            frm = part[u]
            part[u] = to
            pw[frm] -= self.vwgt[u]
            pw[to] += self.vwgt[u]
            cut -= gain
            locked[u] = True
            moves.append((u, frm, to))
            for k in range(self.xadj[u], self.xadj[u + 1]):
                v = self.adjncy[k]
                w = self.wgt[k]
                cv = conn[v]
                cv[frm] -= w
                if cv[frm] <= 0:
                    del cv[frm]
                cv[to] = cv.get(to, 0.0) + w
                if not locked[v]:
                    nmv = self._best_move(v, part, conn, pw)
                    if nmv is not None:
                        heapq.heappush(heap, (-nmv[0], v, nmv[1]))
            imb = self._imbalance(pw)
            if cut < best_cut - 1e-9 or (abs(cut - best_cut) <= 1e-9 and imb < best_imb):
                best_cut, best_len, best_imb = cut, len(moves), imb
            elif len(moves) - best_len > self.max_stall:
                break
        for u, frm, to in reversed(moves[best_len:]):
            part[u] = frm
        return part, start_cut, best_cut

    def refine(self, part: list, max_passes: int = 10) -> tuple[list, list]:
        history = []
        for _ in range(max_passes):
            before_pw = self._imbalance_of(part)
            part, before, after = self.run_pass(part)
            if not history:
                history.append(before)
            history.append(after)
            if after >= before - 1e-9 and self._imbalance_of(part) >= before_pw:
                break
        return part, history

    def _imbalance_of(self, part):
        pw = [0.0] * self.c
        for u, p in enumerate(part):
            pw[p] += self.vwgt[u]
        return max(pw)


def _grow_regions(g: _Graph, c: int, rng) -> list:
    """Greedy graph growing: c-1 regions by best-gain expansion, the rest is the last part."""
    n = g.n
    xadj, adjncy, wgt = g.lists()
    vwgt = g.vwgt.tolist()
    wdeg = np.asarray(g.adj.sum(axis=1)).ravel().tolist()
    part = [-1] * n
    n_free = n
    remaining = float(g.vwgt.sum())
    for t in range(c - 1):
        goal = remaining / (c - t)
        to_region = {}
        heap = []

        def pop():
            while heap:
                key, u = heapq.heappop(heap)
                if part[u] == -1 and key == -(2 * to_region[u] - wdeg[u]):
                    return u
            return None

        region_w = 0.0
        while region_w < goal and n_free > c - 1 - t:
            u = pop()
            if u is None:
                free = [v for v in range(n) if part[v] == -1]
                u = free[int(rng.integers(len(free)))]
            # stop if taking u overshoots the goal more than leaving it undershoots
            if region_w > 0 and region_w + vwgt[u] - goal > goal - region_w:
                break
            part[u] = t
            region_w += vwgt[u]
            n_free -= 1
            for k in range(xadj[u], xadj[u + 1]):
                v = adjncy[k]
                if part[v] == -1:
                    to_region[v] = to_region.get(v, 0.0) + wgt[k]
                    heapq.heappush(heap, (-(2 * to_region[v] - wdeg[v]), v))
        remaining -= region_w
    for u in range(n):
        if part[u] == -1:
            part[u] = c - 1
    return part


def _rebalance(g: _Graph, part: list, c: int, max_pw: float) -> list:
    """Move vertices out of overweight parts, cheapest cut increase first."""
    xadj, adjncy, wgt = g.lists()
    vwgt = g.vwgt.tolist()
    pw = [0.0] * c
    for u, p in enumerate(part):
        pw[p] += vwgt[u]
    for _ in range(g.n * c):
        heavy = max(range(c), key=lambda p: (pw[p], -p))
        if pw[heavy] <= max_pw:
            break
        best = None
        for u in range(g.n):
            if part[u] != heavy:
                continue
            conn = {}
            for k in range(xadj[u], xadj[u + 1]):
                conn[part[adjncy[k]]] = conn.get(part[adjncy[k]], 0.0) + wgt[k]
            own = conn.get(heavy, 0.0)
            for p in range(c):
                if p == heavy or pw[p] + vwgt[u] > max_pw:
                    continue
                key = (conn.get(p, 0.0) - own, -pw[p], -u)
                if best is None or key > best[0]:
                    best = (key, u, p)
        if best is None:
            break
        _, u, p = best
        part[u] = p
        pw[heavy] -= vwgt[u]
        pw[p] += vwgt[u]
    return part


class MultilevelPartitioner:
    def __init__(self, c: int, seed: int, n_trials: int = 4,
                 soft_balance: float = SOFT_BALANCE):
        self.c = c
        self.seed = seed
        self.n_trials = n_trials
        self.soft_balance = soft_balance
        self.trace = MultilevelTrace()

    def _max_pw(self, total: float) -> float:
        return max(self.soft_balance * total / self.c, math.ceil(total / self.c))

    def coarsen(self, g: _Graph, rng) -> tuple[list, list]:
        graphs, maps = [g], []
        coarsen_to = max(2 * self.c, 100)
        max_vwgt = 1.5 * float(g.vwgt.sum()) / coarsen_to
        self._record(g)
        while graphs[-1].n > coarsen_to:
            cur = graphs[-1]
            cmap = _heavy_edge_matching(cur, rng, max_vwgt)
            nc = int(cmap.max()) + 1
            if nc > 0.95 * cur.n:
                break
            graphs.append(_contract(cur, cmap))
            maps.append(cmap)
            self._record(graphs[-1])
        return graphs, maps

    def _record(self, g: _Graph):
        self.trace.levels.append(
            CoarseningLevel(g.n, g.edge_weight(), float(g.self_weight.sum()))
        )

    def run(self, a: SparseMatrix) -> Partition:
        n = a.n_rows
        _check_c(n, self.c)
        if self.c == 1:
            return Partition.from_assignment(np.zeros(n, dtype=np.int64), 1)
        rng = np.random.default_rng(self.seed)
        adj = sp.csr_matrix((np.ones(a.nnz), a.col_indices, a.row_offsets), shape=a.shape)
        fine = _Graph(adj, np.ones(n), np.zeros(n))
        total = float(n)
        graphs, maps = self.coarsen(fine, rng)

        coarsest = graphs[-1]
        best = None
        for _ in range(self.n_trials):
            part = _grow_regions(coarsest, self.c, rng)
            part, _ = _Refiner(coarsest, self.c, self._max_pw(total)).refine(part)
            pw = np.bincount(part, weights=coarsest.vwgt, minlength=self.c)
            key = (max(0.0, pw.max() - self._max_pw(total)), edge_cut_of(coarsest.adj, part))
            if best is None or key < best[0]:
                best = (key, part)
        part = best[1]

        for level in range(len(maps) - 1, -1, -1):
            part = np.asarray(part)[maps[level]].tolist()
            part, hist = _Refiner(graphs[level], self.c, self._max_pw(total)).refine(part)
            self.trace.refine_history.append(hist)

        max_pw = self._max_pw(total)
        if np.bincount(part, minlength=self.c).max() > max_pw:
            self.trace.rebalanced = True
            part = _rebalance(fine, part, self.c, max_pw)
            part, hist = _Refiner(fine, self.c, max_pw).refine(part)
            self.trace.refine_history.append(hist)
        result = Partition.from_assignment(np.asarray(part, dtype=np.int64), self.c)
        hard = max(HARD_BALANCE * n / self.c, math.ceil(n / self.c))
        if result.sizes().max() > hard:
            raise RuntimeError("partition violates the hard balance cap")
        return result


def metis_like_partition(a: SparseMatrix, c: int, seed: int = 0) -> Partition:
    """Multilevel k-way partition minimizing edge cut under a balance constraint."""
    if a.n_rows != a.n_cols:
        raise GraphInputError("adjacency must be square")
    return MultilevelPartitioner(c, seed).run(a)


def partition_graph(a: SparseMatrix, c: int, method: str = "metis", seed: int = 0) -> Partition:
    if method == "metis":
        return metis_like_partition(a, c, seed)
    if method == "random":
        return random_partition(a.n_rows, c, seed)
    raise GraphInputError(f"unknown partition method {method!r}")


# ---------------------------------------------------------------- file format


def write_partition(p: Partition, path) -> None:
    write_atomic(path, "".join(f"{i}\t{int(t)}\n" for i, t in enumerate(p.assignment)))


def read_partition(path, n_nodes: int | None = None) -> Partition:
    assign = {}
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        if not line.strip():
            continue
        parts = line.split("\t")
        if len(parts) != 2:
            raise GraphInputError(f"{path}:{lineno}: expected '<node>\\t<cluster>'")
        try:
            node, cluster = int(parts[0]), int(parts[1])
        except ValueError:
            raise GraphInputError(f"{path}:{lineno}: non-integer field") from None
        if node in assign:
            raise GraphInputError(f"{path}:{lineno}: node {node} listed twice")
        assign[node] = cluster
    n = len(assign) if n_nodes is None else n_nodes
    if sorted(assign) != list(range(n)):
        raise GraphInputError(f"{path}: nodes must be exactly 0..{n - 1}")
    return Partition.from_assignment(np.array([assign[i] for i in range(n)]))
