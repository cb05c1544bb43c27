"""Acceptance criteria 1-9, each at its stated tolerance.

Every test records a one-line verdict that is printed in the terminal summary.
"""

import itertools
import json
import math
import os
import time
from pathlib import Path

import numpy as np

from cluster_gcn.batching import build_batch, make_schedule
from cluster_gcn.cli import main as cli_main
from cluster_gcn.data import (
    Dataset,
    convert_linqs,
    convert_planetoid,
    load_dataset,
    normalize_features,
    write_dataset,
)
from cluster_gcn.model import VARIANTS, GcnModel, forward, loss_and_grad, micro_f1
from cluster_gcn.partition import (
    HARD_BALANCE,
    Partition,
    metis_like_partition,
    quality,
    random_partition,
    write_partition,
)
from cluster_gcn.sparse import from_edges, row_normalize_aug
from cluster_gcn.synthetic import sbm_dataset, sbm_graph
from cluster_gcn.train import TrainConfig, expansion_cost, measure_memory_model, train

from conftest import ACCEPTANCE, random_graph, two_k5_bridge
from test_model import dims_for, finite_diff, make_batch, max_rel_error


def verdict(n, ok, detail):
    ACCEPTANCE[n] = (bool(ok), detail)
    print(f"criterion {n}: {'PASS' if ok else 'FAIL'}  {detail}")
    assert ok, detail


# 1 ---------------------------------------------------------------- gradients


def test_criterion_1_gradient_check():
    start = time.perf_counter()
    worst = 0.0
    cases = 0
    for variant, task, L in itertools.product(VARIANTS, ("multiclass", "multilabel"), (1, 2, 3)):
        a = random_graph(6, 0.5, seed=10 * L + len(variant))
        model = GcnModel.init(dims_for(L, variant), variant, 1.0, task, seed=L)
        batch = make_batch(a, 4, task, 3, seed=L, train=[0, 1, 3, 4])
        _, grads = loss_and_grad(model, forward(model, batch), batch)
        worst = max(worst, max_rel_error(grads, finite_diff(model, batch)))
        cases += 1
    elapsed = time.perf_counter() - start
    verdict(1, worst <= 1e-5 and elapsed < 10,
            f"{cases} cases, max rel err {worst:.2e} (<= 1e-5), {elapsed:.2f}s (< 10s)")


# 2 ---------------------------------------------------------------- full-batch equivalence


def test_criterion_2_full_batch_equivalence():
    ds = sbm_dataset([100, 100], 0.1, 0.01, n_features=16, seed=0)
    start = time.perf_counter()
    a = train(TrainConfig(epochs=10, partitions=1, clusters_per_batch=1, dropout=0.0), ds)
    b = train(TrainConfig(epochs=10, mode="full_batch", dropout=0.0), ds)
    elapsed = time.perf_counter() - start
    diff = float(np.max(np.abs(np.array(a.losses()) - np.array(b.losses()))))
    verdict(2, diff <= 1e-12 and elapsed < 5,
            f"max loss diff {diff:.1e} over 10 epochs (<= 1e-12), {elapsed:.2f}s (< 5s)")


# 3 ---------------------------------------------------------------- normalization


def test_criterion_3_normalization():
    worst = 0.0
    for seed in range(100):
        rng = np.random.default_rng(seed)
        n = int(rng.integers(5, 80))
        a = random_graph(n, float(rng.uniform(0.01, 0.3)), seed, isolated=int(rng.integers(1, 4)))
        worst = max(worst, float(np.max(np.abs(row_normalize_aug(a).to_dense().sum(axis=1) - 1))))
    batch_worst = 0.0
    for seed in range(20):
        a, _ = sbm_graph([30] * 4, 0.15, 0.02, seed)
        part = metis_like_partition(a, 8, seed)
        x = np.zeros((120, 1))
        y = np.zeros(120, dtype=int)
        for group in make_schedule(8, 3, seed, 0).groups():
            b = build_batch(a, x, y, part, group)
            batch_worst = max(batch_worst, float(np.max(np.abs(b.adj_norm.to_dense().sum(axis=1) - 1))))
    verdict(3, worst <= 1e-12 and batch_worst <= 1e-12,
            f"100 graphs max |rowsum-1| {worst:.1e}; multi-cluster batches {batch_worst:.1e} (<= 1e-12)")


# 4 ---------------------------------------------------------------- partition quality


def brute_force_cut(a, c=2):
    n = a.n_rows
    dense = a.to_dense()
    cap = max(HARD_BALANCE * n / c, math.ceil(n / c))
    best = None
    for bits in itertools.product([0, 1], repeat=n - 1):
        assign = np.array((0,) + bits)
        sizes = np.bincount(assign, minlength=2)
        if sizes.min() == 0 or sizes.max() > cap:
            continue
        cut = int(dense[np.ix_(assign == 0, assign == 1)].sum())
        best = cut if best is None else min(best, cut)
    return best


def test_criterion_4_partition_quality():
    wins = 0
    fracs = []
    vs_planted = 0
    for s in range(20):
        a, block = sbm_graph([100, 100], 0.1, 0.01, seed=s)
        m = quality(a, metis_like_partition(a, 2, seed=s))
        r = quality(a, random_partition(200, 2, seed=s))
        planted = quality(a, Partition.from_assignment(block, 2))
        wins += m.edge_cut < r.edge_cut
        vs_planted += m.within_fraction >= planted.within_fraction
        fracs.append(m.within_fraction)
    k5 = two_k5_bridge()
    brute = brute_force_cut(k5)
    got = quality(k5, metis_like_partition(k5, 2, seed=0)).edge_cut
    # some seeds' planted blocks are themselves below 0.9, so the bar applies to the mean
    ok = wins >= 19 and np.mean(fracs) >= 0.9 and brute == 1 and got == 1
    verdict(4, ok, f"metis < random in {wins}/20 (>= 19); mean within_fraction {np.mean(fracs):.3f} "
                   f"(>= 0.9; min {min(fracs):.3f}, matches or beats planted blocks in {vs_planted}/20); "
                   f"K5-bridge cut {got}, brute force {brute}")


# 5 ---------------------------------------------------------------- Cora


CORA_CANDIDATES = [
    os.environ.get("CORA_DIR"),
    Path(__file__).resolve().parent.parent / "data" / "cora",
    Path.home() / "data" / "cora",
]


def find_cora():
    for cand in CORA_CANDIDATES:
        if not cand:
            continue
        d = Path(cand)
        if (d / "cora.content").is_file():
            return convert_linqs(d)
        if (d / "ind.cora.x").is_file():
            return convert_planetoid(d)
        if (d / "graph.tsv").is_file():
            return load_dataset(d)
    return None


def test_criterion_5_cora_random_vs_cluster():
    ds = find_cora()
    if ds is None:
        verdict(5, False, "Cora not found (set CORA_DIR to a LINQS, Planetoid or converted directory)")
    n, stored = ds.n_nodes, ds.graph.nnz + ds.n_nodes
    if (n, stored) != (2708, 13264):
        verdict(5, False, f"converted Cora has N={n}, nnz(A+I)={stored}; expected 2708 and 13264")
    x = normalize_features(ds.features, ds.splits["train"])
    ds = Dataset(ds.graph, x, ds.labels, dict(ds.splits), ds.task)
    start = time.perf_counter()
    acc = {}
    for method in ("metis", "random"):
        acc[method] = np.mean([
            train(TrainConfig(layers=2, partitions=10, partition_method=method, seed=s), ds).test_accuracy
            for s in range(3)
        ]) * 100
    elapsed = time.perf_counter() - start
    gap = acc["metis"] - acc["random"]
    ok = (gap >= 1.0 and abs(acc["metis"] - 82.5) <= 5 and abs(acc["random"] - 78.4) <= 5
          and elapsed < 300)
    verdict(5, ok, f"clustering {acc['metis']:.1f} vs random {acc['random']:.1f} (gap {gap:.1f} >= 1.0; "
                   f"reference 82.5 / 78.4 +- 5), {elapsed:.0f}s (< 300s)")


# 6 ---------------------------------------------------------------- cost shapes


def random_regular(n, d, seed):
    """Configuration-model d-regular simple graph (rejection sampling)."""
    rng = np.random.default_rng(seed)
    while True:
        stubs = rng.permutation(np.repeat(np.arange(n), d)).reshape(-1, 2)
        if np.any(stubs[:, 0] == stubs[:, 1]):
            continue
        pairs = np.sort(stubs, axis=1)
        if len(np.unique(pairs, axis=0)) == len(pairs):
            return from_edges(pairs, n)


def test_criterion_6_cost_shapes():
    ds = sbm_dataset([60] * 5, 0.1, 0.01, n_features=8, seed=0)
    linear = []
    for L in range(2, 7):
        rep = train(TrainConfig(layers=L, epochs=2, partitions=10, clusters_per_batch=3), ds)
        linear.append(all(e.counters.embeddings_computed == L * ds.n_nodes for e in rep.epochs))
    ok_a = all(linear)

    g = random_regular(1000, 3, seed=0)
    assert np.all(g.degrees() == 3)
    ratios = []
    for node in (0, 123, 500, 999):
        costs = [expansion_cost(g, [node], L) for L in range(1, 5)]
        ratios += [b / a for a, b in zip(costs, costs[1:])]
    ok_b = min(ratios) >= 1.8

    big = sbm_dataset([200] * 10, 0.02, 0.001, n_features=50, seed=1)
    cfg = dict(hidden=128, layers=2, epochs=1)
    full = measure_memory_model(TrainConfig(mode="full_batch", **cfg), big)
    cluster_cfg = TrainConfig(partitions=10, clusters_per_batch=1, **cfg)
    rep = train(cluster_cfg, big)
    peak = rep.epochs[0].counters.peak_cached_floats
    assert peak == measure_memory_model(cluster_cfg, big, rep.partition)
    per_node = 128 + 10
    weights = 50 * 128 + 128 * 10
    overhead = weights / (big.n_nodes * per_node + weights)
    b_max = int(rep.partition.sizes().max())
    ratio = peak / full
    # b is at most the soft balance above N/10, so allow that slack on top of the weight term
    tol = 0.1 * 0.05 + overhead
    ok_c = abs(ratio - 0.1) <= tol
    verdict(6, ok_a and ok_b and ok_c,
            f"(a) L*N exact for L=2..6: {ok_a}; (b) min growth {min(ratios):.2f} (>= 1.8); "
            f"(c) peak ratio {ratio:.4f}, b_max/N {b_max / big.n_nodes:.3f}, |ratio-0.1| <= {tol:.4f}")


# 7 ---------------------------------------------------------------- label entropy


def test_criterion_7_label_entropy(tmp_path, capsys):
    below = 0
    for s in range(10):
        ds = sbm_dataset([50] * 4, 0.12, 0.01, n_features=4, label_noise=0.2, seed=s)
        m = np.mean(quality(ds.graph, metis_like_partition(ds.graph, 10, s), ds.labels).label_entropy)
        r = np.mean(quality(ds.graph, random_partition(200, 10, s), ds.labels).label_entropy)
        below += m < r
    ds = sbm_dataset([50] * 4, 0.12, 0.01, n_features=4, label_noise=0.2, seed=0)
    write_dataset(ds, tmp_path / "d")
    write_partition(metis_like_partition(ds.graph, 10, 0), tmp_path / "p.tsv")
    capsys.readouterr()
    code = cli_main(["inspect", "--data", str(tmp_path / "d"), "--partition", str(tmp_path / "p.tsv"),
                     "--random-baseline", "0"])
    doc = json.loads(capsys.readouterr().out)
    hist = doc["partition"]["entropy_histogram"]
    ok = below == 10 and code == 0 and sum(hist["counts"]) == 10
    verdict(7, ok, f"metis mean entropy < random in {below}/10 seeds; inspect exit {code}, "
                   f"histogram counts {hist['counts']}")


# 8 ---------------------------------------------------------------- deep GCN


DEEP_TASK = dict(sizes=[100] * 5, p_in=0.04, p_out=0.008, n_features=64, signal=0.5)
DEEP_TRAIN = dict(mode="full_batch", hidden=64, dropout=0.0, epochs=200)


def best_train_accuracy(ds, **kw):
    tr = ds.splits["train"]
    best = [0.0]

    def track(epoch, logits):
        best[0] = max(best[0], micro_f1("multiclass", logits[tr], ds.labels[tr])[1])

    train(TrainConfig(**DEEP_TRAIN, **kw), ds, on_epoch=track)
    return best[0]


def test_criterion_8_deep_gcn():
    shallow, plain, enhanced = [], [], []
    for s in range(5):
        ds = sbm_dataset(seed=s, **DEEP_TASK)
        shallow.append(best_train_accuracy(ds, layers=2, seed=s))
        plain.append(best_train_accuracy(ds, layers=8, seed=s))
        enhanced.append(best_train_accuracy(ds, layers=8, variant="diag_enhanced", lam=1.0, seed=s))
    plain_fail = sum(a < 0.9 for a in plain)
    enh_ok = sum(a >= 0.9 for a in enhanced)
    ok = min(shallow) >= 0.95 and plain_fail >= 3 and enh_ok >= 4
    fmt = lambda xs: "[" + ", ".join(f"{x:.3f}" for x in xs) + "]"
    verdict(8, ok, f"2-layer {fmt(shallow)} (>= 0.95); 8-layer plain below 0.9 in {plain_fail}/5 "
                   f"{fmt(plain)}; 8-layer diag-enhanced >= 0.9 in {enh_ok}/5 {fmt(enhanced)}")


# 9 ---------------------------------------------------------------- determinism


def test_criterion_9_determinism(tmp_path):
    write_dataset(sbm_dataset([40] * 3, 0.15, 0.01, n_features=6, seed=2), tmp_path / "d")
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"epochs": 8, "partitions": 6, "clusters_per_batch": 2,
                               "dropout": 0.2, "seed": 17}))
    codes = [cli_main(["train", "--data", str(tmp_path / "d"), "--config", str(cfg),
                       "--out", str(tmp_path / run)]) for run in ("a", "b")]
    a = (tmp_path / "a" / "report.csv").read_bytes()
    b = (tmp_path / "b" / "report.csv").read_bytes()
    verdict(9, codes == [0, 0] and a == b, f"two CLI runs, report.csv byte-identical: {a == b} "
                                           f"({len(a)} bytes)")
