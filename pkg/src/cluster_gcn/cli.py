"""Command-line interface: partition / train / eval / bench-cost / inspect.

Exit codes: 0 success, 1 data or numeric error, 2 usage error.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import sys
from pathlib import Path

import numpy as np

from .checkpoint import load_checkpoint, save_checkpoint
from .data import DatasetError, load_dataset, write_atomic
from .model import NumericError, predict_metrics
from .partition import (
    Partition,
    partition_graph,
    quality,
    random_partition,
    read_partition,
    write_partition,
)
from .sparse import GraphInputError
from .train import ConfigError, TrainConfig, expansion_cost, sub_seed, train

RUN_KEYS = ("data", "partition", "out")


class UsageError(Exception):
    pass


def _parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="cluster-gcn", description=__doc__.splitlines()[0])
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("partition", help="cluster the graph and write a partition file")
    p.add_argument("--data", required=True)
    p.add_argument("--clusters", type=int, required=True)
    p.add_argument("--method", choices=("metis", "random"), default="metis")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--inductive", action="store_true",
                   help="partition the training-node subgraph (local ids)")
    p.add_argument("--out", required=True)

    p = sub.add_parser("train", help="train a model from a JSON config")
    p.add_argument("--data", required=True)
    p.add_argument("--config", required=True)
    p.add_argument("--partition")
    p.add_argument("--out", required=True)
    p.add_argument("--checkpoint-format", choices=("json", "npz"), default="json")

    p = sub.add_parser("eval", help="print test micro-F1 of a checkpoint")
    p.add_argument("--data", required=True)
    p.add_argument("--checkpoint", required=True)

    p = sub.add_parser("bench-cost", help="neighbor-expansion vs cluster-mode embedding counts")
    p.add_argument("--data", required=True)
    p.add_argument("--layers", type=int, required=True)
    p.add_argument("--sample-cap", type=int, required=True)
    p.add_argument("--batch-size", type=int, default=512)
    p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("inspect", help="partition quality and label-entropy histogram")
    p.add_argument("--data", required=True)
    p.add_argument("--partition", required=True)
    p.add_argument("--bins", type=int, default=10)
    p.add_argument("--random-baseline", type=int, metavar="SEED",
                   help="also report a random partition with the same cluster count")
    return ap


def _load_config(path) -> tuple[TrainConfig, dict]:
    try:
        raw = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise UsageError(f"cannot read config {path}: {exc}") from None
    if not isinstance(raw, dict):
        raise UsageError("config must be a JSON object")
    try:
        return TrainConfig.from_dict(raw, extra_keys=RUN_KEYS), raw
    except ConfigError as exc:
        raise UsageError(f"config key {exc}") from None
    except TypeError as exc:
        raise UsageError(str(exc)) from None


def _cmd_partition(args) -> int:
    ds = load_dataset(args.data)
    graph = ds.training_subgraph()[1] if args.inductive else ds.graph
    if not 1 <= args.clusters <= graph.n_rows:
        raise UsageError(f"--clusters must be in [1, {graph.n_rows}]")
    part = partition_graph(graph, args.clusters, args.method, args.seed)
    labels = ds.labels[ds.training_subgraph()[0]] if args.inductive else ds.labels
    q = quality(graph, part, labels)
    write_partition(part, args.out)
    write_atomic(str(args.out) + ".quality.json", json.dumps(q.to_dict(), indent=2))
    print(json.dumps({k: v for k, v in q.to_dict().items() if k != "label_entropy"}))
    return 0


def _cmd_train(args) -> int:
    config, raw = _load_config(args.config)
    ds = load_dataset(args.data)
    part = None
    if args.partition:
        n = len(ds.splits["train"]) if config.inductive else ds.n_nodes
        part = read_partition(args.partition, n)
    report = train(config, ds, part)
    out = Path(args.out)
    write_atomic(out / "report.json", report.to_json())
    write_atomic(out / "report.csv", report.to_csv())
    norm = report.model.norm_mode(config.norm_mode)
    save_checkpoint(out / f"checkpoint.{args.checkpoint_format}", report.model,
                    report.optimizer, norm)
    print(f"test_f1\t{report.test_f1}")
    return 0


def _cmd_eval(args) -> int:
    ds = load_dataset(args.data)
    model, _, meta = load_checkpoint(args.checkpoint)
    f1, acc = predict_metrics(model, ds.graph, ds.features, ds.labels, ds.splits["test"],
                              meta.get("norm_mode", "row"))
    print(f"test_micro_f1\t{f1!r}")
    return 0


def _cmd_bench_cost(args) -> int:
    ds = load_dataset(args.data)
    if args.layers < 1 or args.sample_cap < 1 or args.batch_size < 1:
        raise UsageError("--layers, --sample-cap and --batch-size must be positive")
    n = ds.n_nodes
    rng = np.random.default_rng(sub_seed(args.seed, "bench"))
    order = rng.permutation(n)
    batches = [order[i:i + args.batch_size] for i in range(0, n, args.batch_size)]
    print("layers\tcluster_gcn\tfull_batch\tvanilla_sgd\tsampled_r%d" % args.sample_cap)
    for L in range(1, args.layers + 1):
        vanilla = sum(expansion_cost(ds.graph, b, L) for b in batches)
        sampled = sum(expansion_cost(ds.graph, b, L, args.sample_cap, seed=i)
                      for i, b in enumerate(batches))
        print(f"{L}\t{L * n}\t{L * n}\t{vanilla}\t{sampled}")
    return 0


def _histogram(values, n_classes: int, bins: int) -> dict:
    top = math.log(max(n_classes, 2))
    counts, edges = np.histogram(values, bins=bins, range=(0.0, top))
    return {"bin_edges": edges.tolist(), "counts": counts.tolist()}


def _summary(ds, part: Partition, bins: int) -> dict:
    q = quality(ds.graph, part, ds.labels)
    k = ds.n_classes
    d = q.to_dict()
    d["mean_label_entropy"] = float(np.mean(q.label_entropy))
    d["entropy_histogram"] = _histogram(q.label_entropy, k, bins)
    return d


def _cmd_inspect(args) -> int:
    ds = load_dataset(args.data)
    part = read_partition(args.partition, ds.n_nodes)
    out = {"partition": _summary(ds, part, args.bins)}
    if args.random_baseline is not None:
        rnd = random_partition(ds.n_nodes, part.n_clusters, args.random_baseline)
        out["random"] = _summary(ds, rnd, args.bins)
    print(json.dumps(out, indent=2))
    return 0


COMMANDS = {
    "partition": _cmd_partition,
    "train": _cmd_train,
    "eval": _cmd_eval,
    "bench-cost": _cmd_bench_cost,
    "inspect": _cmd_inspect,
}


def main(argv=None) -> int:
    ap = _parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING)
    try:
        return COMMANDS[args.command](args)
    except (UsageError, ConfigError) as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 2
    except (DatasetError, GraphInputError, NumericError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
