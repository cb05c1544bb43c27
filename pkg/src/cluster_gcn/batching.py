"""Batch construction from sampled clusters (stochastic multiple partitions)."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .partition import Partition, entropy, label_histogram
from .sparse import GraphInputError, SparseMatrix, extract_submatrix, normalize


@dataclass(frozen=True)
class EpochSchedule:
    order: np.ndarray
    group_size: int

    def groups(self) -> list[np.ndarray]:
        q = self.group_size
        return [self.order[i:i + q] for i in range(0, len(self.order), q)]

    def __len__(self) -> int:
        return -(-len(self.order) // self.group_size)


@dataclass(frozen=True)
class Batch:
    global_ids: np.ndarray
    adj: SparseMatrix           # raw subgraph A[V, V], kept for utilization counts
    adj_norm: SparseMatrix
    features: np.ndarray
    labels: np.ndarray
    train_mask: np.ndarray
    cluster_ids: tuple

    @property
    def size(self) -> int:
        return len(self.global_ids)

    @property
    def n_train(self) -> int:
        return int(self.train_mask.sum())


def make_schedule(p: int, q: int, seed: int, epoch: int) -> EpochSchedule:
    """Per-epoch permutation of the ``p`` clusters, cut into groups of ``q``.

    The trailing group is smaller when ``q`` does not divide ``p``.
    """
    if q < 1 or p < 1:
        raise GraphInputError("p and q must be positive")
    if q > p:
        raise GraphInputError(f"clusters per batch q={q} exceeds number of clusters p={p}")
    rng = np.random.default_rng([seed, epoch])
    return EpochSchedule(rng.permutation(p), q)


def _train_mask(n: int, train_nodes) -> np.ndarray:
    mask = np.zeros(n, dtype=bool)
    if train_nodes is None:
        mask[:] = True
    else:
        mask[np.asarray(train_nodes, dtype=np.int64)] = True
    return mask


def batch_from_nodes(a_full: SparseMatrix, x: np.ndarray, y: np.ndarray, nodes,
                     norm_mode: str = "row", train_mask: np.ndarray | None = None,
                     cluster_ids: tuple = ()) -> Batch:
    nodes = np.asarray(nodes, dtype=np.int64)
    if len(nodes) == 0:
        raise GraphInputError("batch has no nodes")
    sub = extract_submatrix(a_full, nodes)
    mask = np.ones(len(nodes), dtype=bool) if train_mask is None else train_mask[nodes]
    return Batch(
        global_ids=nodes,
        adj=sub,
        adj_norm=normalize(sub, norm_mode),
        features=np.asarray(x, dtype=np.float64)[nodes],
        labels=np.asarray(y)[nodes],
        train_mask=mask,
        cluster_ids=tuple(int(t) for t in cluster_ids),
    )


def build_batch(a_full: SparseMatrix, x: np.ndarray, y: np.ndarray, part: Partition,
                cluster_ids, norm_mode: str = "row", train_split=None) -> Batch:
    """Union of the chosen clusters with all links among them restored,
    renormalized on the subgraph's own degrees.

    ``train_split`` lists the training node ids (``None`` means every node
    contributes to the loss).
    """
    cluster_ids = [int(t) for t in cluster_ids]
    if len(set(cluster_ids)) != len(cluster_ids):
        raise GraphInputError("cluster ids must be distinct")
    for t in cluster_ids:
        if not 0 <= t < part.n_clusters:
            raise GraphInputError(f"cluster id {t} out of range")
    if not cluster_ids:
        raise GraphInputError("empty cluster union")
    nodes = np.sort(np.concatenate([part.clusters[t] for t in cluster_ids]))
    mask = _train_mask(a_full.n_rows, train_split)
    return batch_from_nodes(a_full, x, y, nodes, norm_mode, mask, cluster_ids)


def batch_label_entropy(batches) -> list[float]:
    """Entropy (nats) of each batch's training-label histogram."""
    return [entropy(label_histogram(b.labels[b.train_mask])) for b in batches]
