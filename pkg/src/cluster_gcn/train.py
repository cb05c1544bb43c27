"""Training loop (cluster and full-batch modes), cost accounting and reports."""

from __future__ import annotations

import csv
import io
import json
import logging
import os
import time
import zlib
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from .batching import Batch, batch_from_nodes, build_batch, make_schedule
from .data import Dataset
from .model import (
    GcnModel,
    NumericError,
    forward,
    loss_and_grad,
    micro_f1,
    precompute_ax,
    predict_logits,
    propagation_matrix,
)
from .optim import AdamState, adam_step
from .partition import Partition, partition_graph
from .sparse import GraphInputError, SparseMatrix, normalize

log = logging.getLogger(__name__)

MODES = ("cluster", "full_batch")


class ConfigError(ValueError):
    """Invalid configuration; ``key`` names the offending field."""

    def __init__(self, key: str, message: str):
        super().__init__(f"{key}: {message}")
        self.key = key


class TrainingDiverged(NumericError):
    pass


@dataclass
class TrainConfig:
    layers: int = 2
    hidden: int = 16
    variant: str = "plain"
    lam: float = 1.0
    partitions: int = 10
    clusters_per_batch: int = 1
    epochs: int = 200
    lr: float = 0.01
    dropout: float = 0.2
    seed: int = 0
    norm_mode: str = "row"
    task: str | None = None
    mode: str = "cluster"
    partition_method: str = "metis"
    precompute_ax: bool = False
    inductive: bool = False

    def __post_init__(self):
        self.validate()

    def validate(self):
        def need(key, ok, msg):
            if not ok:
                raise ConfigError(key, msg)

        for key in ("layers", "hidden", "partitions", "clusters_per_batch", "epochs", "seed"):
            val = getattr(self, key)
            need(key, isinstance(val, (int, np.integer)) and not isinstance(val, bool),
                 f"expected an integer, got {val!r}")
        need("layers", self.layers >= 1, "must be >= 1")
        need("hidden", self.hidden >= 1, "must be >= 1")
        need("epochs", self.epochs >= 1, "must be >= 1")
        need("partitions", self.partitions >= 1, "must be >= 1")
        need("clusters_per_batch", 1 <= self.clusters_per_batch <= self.partitions,
             "must satisfy 1 <= clusters_per_batch <= partitions")
        need("seed", 0 <= self.seed < 2 ** 64, "must be a non-negative 64-bit integer")
        for key in ("lam", "lr", "dropout"):
            val = getattr(self, key)
            need(key, isinstance(val, (int, float)) and not isinstance(val, bool)
                 and np.isfinite(val), f"expected a finite number, got {val!r}")
        need("lr", self.lr > 0, "must be positive")
        need("dropout", 0.0 <= self.dropout < 1.0, "must be in [0, 1)")
        need("variant", self.variant in ("plain", "residual", "identity_aug", "diag_enhanced"),
             f"unknown variant {self.variant!r}")
        need("norm_mode", self.norm_mode in ("row", "sym"), f"unknown norm_mode {self.norm_mode!r}")
        need("task", self.task in (None, "multiclass", "multilabel"), f"unknown task {self.task!r}")
        need("mode", self.mode in MODES, f"unknown mode {self.mode!r}")
        need("partition_method", self.partition_method in ("metis", "random"),
             f"unknown method {self.partition_method!r}")
        for key in ("precompute_ax", "inductive"):
            need(key, isinstance(getattr(self, key), bool), "expected true or false")

    @classmethod
    def from_dict(cls, d: dict, extra_keys=()) -> TrainConfig:
        known = {f.name for f in fields(cls)}
        for key in d:
            if key not in known and key not in extra_keys:
                raise ConfigError(key, "unknown configuration key")
        return cls(**{k: v for k, v in d.items() if k in known})

    def to_dict(self) -> dict:
        return asdict(self)


def sub_seed(seed: int, name: str) -> int:
    """Independent named stream derived from the run seed."""
    ss = np.random.SeedSequence(entropy=seed, spawn_key=(zlib.crc32(name.encode()),))
    return int(ss.generate_state(1, dtype=np.uint64)[0])


@dataclass
class CostCounters:
    embeddings_computed: int = 0
    nnz_touched: int = 0
    peak_cached_floats: int = 0
    utilization_sum: int = 0

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class EpochRecord:
    epoch: int
    loss: float
    val_f1: float | None
    seconds: float
    counters: CostCounters
    n_batches: int


@dataclass
class TrainReport:
    config: dict
    epochs: list = field(default_factory=list)
    test_f1: float | None = None
    test_accuracy: float | None = None
    partition_seconds: float = 0.0
    model: GcnModel | None = None
    optimizer: AdamState | None = None
    partition: Partition | None = None

    def losses(self) -> list:
        return [e.loss for e in self.epochs]

    def to_dict(self) -> dict:
        return {
            "config": self.config,
            "epochs": [
                {"epoch": e.epoch, "loss": e.loss, "val_f1": e.val_f1, "seconds": e.seconds,
                 "counters": e.counters.to_dict()}
                for e in self.epochs
            ],
            "test_f1": self.test_f1,
            "partition_seconds": self.partition_seconds,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    def to_csv(self) -> str:
        """One row per epoch. Wall-clock columns are left out so the file is reproducible."""
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["epoch", "loss", "val_f1", "n_batches", "embeddings_computed",
                    "nnz_touched", "peak_cached_floats", "utilization_sum"])
        for e in self.epochs:
            c = e.counters
            w.writerow([e.epoch, repr(e.loss), "" if e.val_f1 is None else repr(e.val_f1),
                        e.n_batches, c.embeddings_computed, c.nnz_touched,
                        c.peak_cached_floats, c.utilization_sum])
        return buf.getvalue()


def embedding_utilization(batch: Batch) -> int:
    """Nonzeros of the batch's raw adjacency block."""
    return batch.adj.nnz


def expansion_cost(a: SparseMatrix, seeds, n_layers: int, r: int | None = None, seed: int = 0) -> int:
    """Embeddings touched by the L-hop backward expansion from ``seeds``.

    Each node counts once, at the outermost layer that first needs it. With
    ``r`` set, every expanded node contributes at most ``r`` sampled
    neighbors.
    """
    if n_layers < 1:
        raise GraphInputError("number of layers must be >= 1")
    rng = np.random.default_rng(seed)
    offsets, cols = a.row_offsets, a.col_indices
    frontier = np.unique(np.asarray(seeds, dtype=np.int64))
    visited = np.zeros(a.n_rows, dtype=bool)
    visited[frontier] = True
    total = len(frontier)
    for _ in range(n_layers):
        nxt = []
        for u in frontier:
            nbrs = cols[offsets[u]:offsets[u + 1]]
            if r is not None and len(nbrs) > r:
                nbrs = rng.choice(nbrs, size=r, replace=False)
            nxt.append(nbrs)
        if not nxt:
            break
        cand = np.unique(np.concatenate(nxt))
        cand = cand[~visited[cand]]
        visited[cand] = True
        total += len(cand)
        frontier = cand
    return int(total)


def model_dims(config: TrainConfig, n_features: int, n_classes: int) -> list:
    return [n_features] + [config.hidden] * (config.layers - 1) + [n_classes]


def weight_floats(dims) -> int:
    return int(sum(a * b for a, b in zip(dims[:-1], dims[1:])))


class _Problem:
    """The graph/features/labels the optimizer sees (training-only graph when inductive)."""

    def __init__(self, config: TrainConfig, ds: Dataset):
        if config.inductive:
            ids, graph = ds.training_subgraph()
            self.global_ids = ids
            self.graph = graph
            self.x = ds.features[ids]
            self.y = ds.labels[ids]
            self.train_mask = np.ones(len(ids), dtype=bool)
        else:
            self.global_ids = np.arange(ds.n_nodes)
            self.graph = ds.graph
            self.x = ds.features
            self.y = ds.labels
            self.train_mask = np.zeros(ds.n_nodes, dtype=bool)
            self.train_mask[ds.splits["train"]] = True

    @property
    def n(self) -> int:
        return self.graph.n_rows


def _resolve_task(config: TrainConfig, ds: Dataset) -> str:
    if config.task is not None and config.task != ds.task:
        raise ConfigError("task", f"config says {config.task!r} but dataset is {ds.task!r}")
    return ds.task


def _make_partition(config: TrainConfig, prob: _Problem, partition: Partition | None):
    if config.mode == "full_batch":
        return None
    if partition is not None:
        if partition.n_nodes != prob.n:
            raise GraphInputError(
                f"partition covers {partition.n_nodes} nodes, training graph has {prob.n}"
            )
        if partition.n_clusters != config.partitions:
            raise ConfigError("partitions", f"partition file has {partition.n_clusters} clusters")
        return partition
    return partition_graph(prob.graph, config.partitions, config.partition_method,
                           sub_seed(config.seed, "partition"))


def _epoch_groups(config: TrainConfig, part: Partition | None, epoch: int) -> list:
    if part is None:
        return [None]
    sched = make_schedule(part.n_clusters, config.clusters_per_batch,
                          sub_seed(config.seed, "schedule"), epoch)
    return [tuple(int(t) for t in g) for g in sched.groups()]


def _thread_count() -> int:
    try:
        return max(1, int(os.environ.get("CLUSTER_GCN_THREADS", "1")))
    except ValueError:
        return 1


def measure_memory_model(config: TrainConfig, dataset: Dataset,
                         partition: Partition | None = None) -> int:
    """Peak cached floats for ``config``: max batch activations plus weights.

    Also checks the cluster-mode figure against full-batch whenever the
    largest batch is smaller than the graph.
    """
    prob = _Problem(config, dataset)
    dims = model_dims(config, dataset.n_features, dataset.n_classes)
    per_node = sum(dims[1:])
    full = prob.n * per_node + weight_floats(dims)
    part = _make_partition(config, prob, partition)
    if part is None:
        return full
    sizes = part.sizes()
    b_max = max(int(sum(sizes[list(g)])) for g in _epoch_groups(config, part, 0))
    peak = b_max * per_node + weight_floats(dims)
    if b_max < prob.n and not peak < full:
        raise AssertionError("cluster-mode peak is not below full-batch peak")
    return peak


def train(config: TrainConfig, dataset: Dataset, partition: Partition | None = None,
          on_epoch=None) -> TrainReport:
    """Cluster-GCN training: partition, then per epoch sample cluster groups,
    build renormalized batches and take one Adam step per batch.

    ``mode="full_batch"`` takes one step per epoch on the whole graph.
    ``on_epoch(epoch, logits)`` is called after every epoch with full-graph
    evaluation logits.
    """
    task = _resolve_task(config, dataset)
    prob = _Problem(config, dataset)
    dims = model_dims(config, dataset.n_features, dataset.n_classes)
    model = GcnModel.init(dims, config.variant, config.lam, task, sub_seed(config.seed, "init"))
    norm = model.norm_mode(config.norm_mode)

    t0 = time.perf_counter()
    part = _make_partition(config, prob, partition)
    partition_seconds = time.perf_counter() - t0

    opt = AdamState(lr=config.lr)
    report = TrainReport(config.to_dict(), partition_seconds=partition_seconds,
                         model=model, optimizer=opt, partition=part)
    eval_adj = normalize(dataset.graph, norm)
    val = dataset.splits["val"]
    dropout_seed = sub_seed(config.seed, "dropout")
    w_floats = weight_floats(dims)
    batch_cache = {}
    ax_cache = {}
    cacheable = part is None or config.clusters_per_batch in (1, part.n_clusters)

    def make(group):
        if group in batch_cache:
            return batch_cache[group]
        if group is None:
            b = batch_from_nodes(prob.graph, prob.x, prob.y, np.arange(prob.n), norm, prob.train_mask)
        else:
            b = build_batch(prob.graph, prob.x, prob.y, part, group, norm,
                            np.flatnonzero(prob.train_mask))
        if cacheable:
            batch_cache[group] = b
        return b

    workers = _thread_count()
    pool = ThreadPoolExecutor(max_workers=1) if workers > 1 else None
    try:
        for epoch in range(config.epochs):
            start = time.perf_counter()
            counters = CostCounters()
            groups = _epoch_groups(config, part, epoch)
            loss_sum = 0.0
            size_sum = 0
            pending = pool.submit(make, groups[0]) if pool else None
            for bi, group in enumerate(groups):
                if pool:
                    batch = pending.result()
                    if bi + 1 < len(groups):
                        pending = pool.submit(make, groups[bi + 1])
                else:
                    batch = make(group)
                ax = None
                if config.precompute_ax:
                    key = tuple(batch.global_ids.tolist())
                    if key not in ax_cache:
                        ax_cache[key] = precompute_ax(
                            propagation_matrix(model.variant, batch.adj_norm, model.lam), batch.features)
                        counters.nnz_touched += batch.adj_norm.nnz * dims[0]
                    ax = ax_cache[key] if cacheable else ax_cache.pop(key)
                try:
                    trace = forward(model, batch, config.dropout, [dropout_seed, epoch, bi],
                                    training=True, ax=ax)
                    loss, grads = loss_and_grad(model, trace, batch)
                    if not np.isfinite(loss):
                        raise NumericError("loss is not finite")
                    model.weights, _ = adam_step(opt, model.weights, grads)
                except NumericError as exc:
                    raise TrainingDiverged(f"epoch {epoch}, batch {bi}: {exc}") from exc
                counters.embeddings_computed += model.n_layers * batch.size
                for l in range(model.n_layers):
                    if not (l == 0 and ax is not None):
                        counters.nnz_touched += trace.prop.nnz * dims[l]
                counters.peak_cached_floats = max(counters.peak_cached_floats,
                                                  trace.cached_floats() + w_floats)
                counters.utilization_sum += embedding_utilization(batch)
                loss_sum += loss * batch.size
                size_sum += batch.size
            val_f1 = None
            if len(val) or on_epoch:
                logits = predict_logits(model, dataset.graph, dataset.features, adj_norm=eval_adj)
                if len(val):
                    val_f1 = micro_f1(task, logits[val], dataset.labels[val])[0]
                if on_epoch:
                    on_epoch(epoch, logits)
            report.epochs.append(EpochRecord(epoch, loss_sum / size_sum, val_f1,
                                             time.perf_counter() - start, counters, len(groups)))
            log.debug("epoch %d loss %.6f val_f1 %s", epoch, loss_sum / size_sum, val_f1)
    finally:
        if pool:
            pool.shutdown()

    test = dataset.splits["test"]
    if len(test):
        logits = predict_logits(model, dataset.graph, dataset.features, adj_norm=eval_adj)
        report.test_f1, report.test_accuracy = micro_f1(task, logits[test], dataset.labels[test])
    return report

