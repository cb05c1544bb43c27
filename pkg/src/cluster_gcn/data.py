"""Dataset directory format, loading/validation, feature normalization and
converters from the public citation-network layouts.

A dataset directory holds::

    graph.tsv     "src<TAB>dst" per undirected edge, 0-based ids
    features.csv  header "N,F", then N comma-separated rows
    labels.tsv    "node<TAB>label" or "node<TAB>l1,l2,..." (multilabel)
    splits.json   {"train": [...], "val": [...], "test": [...]}
"""

from __future__ import annotations

import json
import os
import pickle
import tempfile
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .sparse import GraphInputError, SparseMatrix, edge_list, extract_submatrix, from_edges

SPLITS = ("train", "val", "test")


class DatasetError(GraphInputError):
    pass


@dataclass
class Dataset:
    graph: SparseMatrix
    features: np.ndarray
    labels: np.ndarray          # int vector (multiclass) or 0/1 matrix (multilabel)
    splits: dict
    task: str = "multiclass"

    def __post_init__(self):
        n = self.graph.n_rows
        if self.features.shape[0] != n:
            raise DatasetError(f"features have {self.features.shape[0]} rows, graph has {n} nodes")
        if len(self.labels) != n:
            raise DatasetError(f"labels cover {len(self.labels)} nodes, graph has {n}")
        seen = set()
        for name in SPLITS:
            ids = np.asarray(self.splits.get(name, []), dtype=np.int64)
            self.splits[name] = ids
            if len(ids) and (ids.min() < 0 or ids.max() >= n):
                raise DatasetError(f"split {name!r} has node ids outside [0, {n})")
            if len(np.unique(ids)) != len(ids):
                raise DatasetError(f"split {name!r} lists a node twice")
            overlap = seen.intersection(ids.tolist())
            if overlap:
                raise DatasetError(f"split {name!r} overlaps another split (node {min(overlap)})")
            seen.update(ids.tolist())

    @property
    def n_nodes(self) -> int:
        return self.graph.n_rows

    @property
    def n_features(self) -> int:
        return self.features.shape[1]

    @property
    def n_classes(self) -> int:
        if self.task == "multilabel":
            return self.labels.shape[1]
        return int(self.labels.max()) + 1 if len(self.labels) else 0

    def training_subgraph(self) -> tuple[np.ndarray, SparseMatrix]:
        """Training node ids and the adjacency among them only."""
        train = np.sort(self.splits["train"])
        return train, extract_submatrix(self.graph, train)


def normalize_features(x, train_nodes) -> np.ndarray:
    """Column z-score with mean and population std taken over training rows."""
    x = np.asarray(x, dtype=np.float64)
    train_nodes = np.asarray(train_nodes, dtype=np.int64)
    if len(train_nodes) == 0:
        raise DatasetError("feature normalization needs at least one training node")
    ref = x[train_nodes]
    mean = ref.mean(axis=0)
    std = ref.std(axis=0)
    out = np.zeros_like(x)
    live = std > 0
    out[:, live] = (x[:, live] - mean[live]) / std[live]
    return out


# ---------------------------------------------------------------- I/O


def write_atomic(path, text: str) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "w") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _read_graph(path: Path, n: int) -> SparseMatrix:
    edges = []
    for lineno, line in enumerate(path.read_text().splitlines(), 1):
        if not line.strip():
            continue
        fields = line.split("\t")
        try:
            if len(fields) != 2:
                raise ValueError
            src, dst = int(fields[0]), int(fields[1])
        except ValueError:
            raise DatasetError(f"{path.name}:{lineno}: expected 'src<TAB>dst', got {line!r}") from None
        if not (0 <= src < n and 0 <= dst < n):
            raise DatasetError(f"{path.name}:{lineno}: node id outside [0, {n})")
        edges.append((src, dst))
    return from_edges(np.asarray(edges, dtype=np.int64).reshape(-1, 2), n)


def _read_features(path: Path) -> np.ndarray:
    lines = path.read_text().splitlines()
    if not lines:
        raise DatasetError(f"{path.name}: empty file")
    try:
        n, f = (int(v) for v in lines[0].split(","))
    except ValueError:
        raise DatasetError(f"{path.name}:1: header must be 'N,F'") from None
    rows = [ln for ln in lines[1:] if ln.strip()]
    if len(rows) != n:
        raise DatasetError(f"{path.name}: header says {n} rows, found {len(rows)}")
    x = np.empty((n, f))
    for i, line in enumerate(rows):
        vals = line.split(",")
        if len(vals) != f:
            raise DatasetError(f"{path.name}:{i + 2}: expected {f} values, got {len(vals)}")
        try:
            x[i] = [float(v) for v in vals]
        except ValueError:
            raise DatasetError(f"{path.name}:{i + 2}: non-numeric value") from None
    if not np.all(np.isfinite(x)):
        raise DatasetError(f"{path.name}: non-finite feature value")
    return x


def _read_labels(path: Path, n: int, task: str | None):
    entries = {}
    multilabel = task == "multilabel"
    for lineno, line in enumerate(path.read_text().splitlines(), 1):
        if not line.strip():
            continue
        fields = line.split("\t")
        try:
            if len(fields) != 2:
                raise ValueError
            node = int(fields[0])
            tokens = [t for t in fields[1].split(",") if t.strip()]
            ids = [int(t) for t in tokens]
        except ValueError:
            raise DatasetError(f"{path.name}:{lineno}: expected 'node<TAB>label[,label...]'") from None
        if not 0 <= node < n:
            raise DatasetError(f"{path.name}:{lineno}: node id outside [0, {n})")
        if node in entries:
            raise DatasetError(f"{path.name}:{lineno}: node {node} labeled twice")
        if any(i < 0 for i in ids):
            raise DatasetError(f"{path.name}:{lineno}: negative label id")
        if "," in fields[1] or len(ids) != 1:
            multilabel = True
        entries[node] = ids
    if len(entries) != n:
        missing = min(set(range(n)) - set(entries))
        raise DatasetError(f"{path.name}: node {missing} has no label line")
    if task == "multiclass" and multilabel:
        raise DatasetError(f"{path.name}: multilabel tokens in a multiclass dataset")
    if multilabel:
        k = 1 + max((max(ids) for ids in entries.values() if ids), default=-1)
        y = np.zeros((n, k), dtype=np.int64)
        for node, ids in entries.items():
            y[node, ids] = 1
        return y, "multilabel"
    return np.array([entries[i][0] for i in range(n)], dtype=np.int64), "multiclass"


def load_dataset(dir_path) -> Dataset:
    d = Path(dir_path)
    for name in ("graph.tsv", "features.csv", "labels.tsv", "splits.json"):
        if not (d / name).is_file():
            raise DatasetError(f"{d}: missing {name}")
    x = _read_features(d / "features.csv")
    n = x.shape[0]
    try:
        splits = json.loads((d / "splits.json").read_text())
    except json.JSONDecodeError as exc:
        raise DatasetError(f"splits.json: {exc}") from None
    if not isinstance(splits, dict):
        raise DatasetError("splits.json must hold an object")
    task = splits.pop("task", None)
    unknown = set(splits) - set(SPLITS)
    if unknown:
        raise DatasetError(f"splits.json: unknown key {sorted(unknown)[0]!r}")
    graph = _read_graph(d / "graph.tsv", n)
    labels, task = _read_labels(d / "labels.tsv", n, task)
    return Dataset(graph, x, labels, {k: splits.get(k, []) for k in SPLITS}, task)


def write_dataset(ds: Dataset, dir_path) -> None:
    d = Path(dir_path)
    d.mkdir(parents=True, exist_ok=True)
    edges = edge_list(ds.graph)
    write_atomic(d / "graph.tsv", "".join(f"{i}\t{j}\n" for i, j in edges))
    rows = [f"{ds.n_nodes},{ds.n_features}\n"]
    rows += [",".join(repr(float(v)) for v in row) + "\n" for row in ds.features]
    write_atomic(d / "features.csv", "".join(rows))
    if ds.task == "multilabel":
        lab = [f"{i}\t{','.join(str(k) for k in np.flatnonzero(row))},\n"
               for i, row in enumerate(ds.labels)]
    else:
        lab = [f"{i}\t{int(v)}\n" for i, v in enumerate(ds.labels)]
    write_atomic(d / "labels.tsv", "".join(lab))
    splits = {k: [int(v) for v in ds.splits[k]] for k in SPLITS}
    if ds.task == "multilabel":
        splits["task"] = "multilabel"
    write_atomic(d / "splits.json", json.dumps(splits))


# ---------------------------------------------------------------- converters


def _planetoid_split(labels: np.ndarray, per_class: int, n_val: int, n_test: int, seed: int):
    rng = np.random.default_rng(seed)
    train = []
    for k in np.unique(labels):
        members = np.flatnonzero(labels == k)
        train.extend(rng.choice(members, size=min(per_class, len(members)), replace=False))
    train = np.sort(np.asarray(train))
    rest = rng.permutation(np.setdiff1d(np.arange(len(labels)), train))
    return {"train": train, "val": np.sort(rest[:n_val]),
            "test": np.sort(rest[n_val:n_val + n_test])}


def convert_linqs(src_dir, dst_dir=None, name: str = "cora", seed: int = 0) -> Dataset:
    """Convert the LINQS ``<name>.content`` / ``<name>.cites`` pair.

    Papers are renumbered in file order; citations to unknown papers are
    dropped. Splits follow the semi-supervised convention of 20 labeled
    nodes per class, 500 validation and 1000 test nodes (seeded).
    """
    src = Path(src_dir)
    ids, feats, classes = [], [], []
    for line in (src / f"{name}.content").read_text().splitlines():
        if not line.strip():
            continue
        tok = line.split()
        ids.append(tok[0])
        feats.append([float(v) for v in tok[1:-1]])
        classes.append(tok[-1])
    index = {pid: i for i, pid in enumerate(ids)}
    names = sorted(set(classes))
    labels = np.array([names.index(c) for c in classes], dtype=np.int64)
    edges = []
    for line in (src / f"{name}.cites").read_text().splitlines():
        tok = line.split()
        if len(tok) == 2 and tok[0] in index and tok[1] in index:
            edges.append((index[tok[0]], index[tok[1]]))
    graph = from_edges(np.asarray(edges).reshape(-1, 2), len(ids))
    ds = Dataset(graph, np.asarray(feats), labels, _planetoid_split(labels, 20, 500, 1000, seed))
    if dst_dir is not None:
        write_dataset(ds, dst_dir)
    return ds


def convert_planetoid(src_dir, dst_dir=None, name: str = "cora") -> Dataset:
    """Convert the Planetoid ``ind.<name>.*`` pickles with their standard split."""
    src = Path(src_dir)

    def load(key):
        with open(src / f"ind.{name}.{key}", "rb") as fh:
            return pickle.load(fh, encoding="latin1")

    x, y, tx, ty, allx, ally, graph = (load(k) for k in ("x", "y", "tx", "ty", "allx", "ally", "graph"))
    test_idx = np.array([int(v) for v in (src / f"ind.{name}.test.index").read_text().split()])
    dense = lambda m: m.toarray() if hasattr(m, "toarray") else np.asarray(m)
    feats = np.vstack([dense(allx), dense(tx)]).astype(np.float64)
    onehot = np.vstack([np.asarray(ally), np.asarray(ty)])
    order = np.sort(test_idx)
    feats[test_idx] = feats[order]
    onehot[test_idx] = onehot[order]
    n = feats.shape[0]
    edges = [(u, v) for u, nbrs in graph.items() for v in nbrs if u < n and v < n]
    adj = from_edges(np.asarray(edges).reshape(-1, 2), n)
    labels = onehot.argmax(axis=1).astype(np.int64)
    n_train = len(np.asarray(y))
    splits = {"train": np.arange(n_train), "val": np.arange(n_train, n_train + 500),
              "test": order}
    ds = Dataset(adj, feats, labels, splits)
    if dst_dir is not None:
        write_dataset(ds, dst_dir)
    return ds
