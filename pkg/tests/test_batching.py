import math

import numpy as np
import pytest

from cluster_gcn.batching import batch_label_entropy, build_batch, make_schedule
from cluster_gcn.partition import Partition, metis_like_partition, random_partition
from cluster_gcn.sparse import GraphInputError, extract_submatrix, row_normalize_aug
from cluster_gcn.synthetic import sbm_graph

from conftest import path, random_graph


def _xy(n, k=2, seed=0):
    rng = np.random.default_rng(seed)
    return rng.normal(size=(n, 3)), rng.integers(0, k, size=n)


def test_schedule_examples():
    s = make_schedule(4, 4, seed=0, epoch=0)
    assert len(s) == 1 and sorted(s.groups()[0].tolist()) == [0, 1, 2, 3]
    s = make_schedule(5, 2, seed=1, epoch=3)
    assert [len(g) for g in s.groups()] == [2, 2, 1]
    assert sorted(np.concatenate(s.groups()).tolist()) == list(range(5))
    again = make_schedule(5, 2, seed=1, epoch=3)
    assert np.array_equal(s.order, again.order)
    with pytest.raises(GraphInputError):
        make_schedule(3, 4, 0, 0)


def test_schedule_changes_between_epochs():
    orders = {tuple(make_schedule(10, 3, seed=5, epoch=e).order) for e in range(10)}
    assert len(orders) > 1


def test_path_between_cluster_edge():
    a = path(4)
    part = Partition.from_assignment([0, 0, 1, 1], 2)
    x, y = _xy(4)
    both = build_batch(a, x, y, part, [0, 1])
    assert both.adj.to_dense()[1, 2] == 1.0
    assert both.adj.nnz == 6
    singles = [build_batch(a, x, y, part, [t]) for t in range(2)]
    assert sum(b.adj.nnz for b in singles) == 4
    assert all(b.adj.nnz == 2 for b in singles)


def test_all_clusters_equals_full_graph():
    a = random_graph(40, 0.1, seed=1, isolated=2)
    part = random_partition(40, 4, seed=0)
    x, y = _xy(40)
    b = build_batch(a, x, y, part, [2, 0, 3, 1])
    assert np.array_equal(b.global_ids, np.arange(40))
    assert np.array_equal(b.adj_norm.to_dense(), row_normalize_aug(a).to_dense())
    assert np.array_equal(b.features, x)


def test_single_cluster_is_diagonal_block():
    a = random_graph(30, 0.2, seed=2)
    part = random_partition(30, 3, seed=1)
    x, y = _xy(30)
    b = build_batch(a, x, y, part, [1])
    nodes = part.clusters[1]
    assert np.array_equal(b.global_ids, nodes)
    assert np.array_equal(b.adj_norm.to_dense(),
                          row_normalize_aug(extract_submatrix(a, nodes)).to_dense())
    assert np.array_equal(b.labels, y[nodes])


def test_renormalized_rows_sum_to_one():
    for seed in range(10):
        a = random_graph(60, 0.08, seed, isolated=2)
        part = random_partition(60, 6, seed)
        x, y = _xy(60)
        for group in make_schedule(6, 4, seed, 0).groups():
            b = build_batch(a, x, y, part, group)
            sums = b.adj_norm.to_dense().sum(axis=1)
            assert np.max(np.abs(sums - 1)) <= 1e-12


def test_train_mask():
    a = path(6)
    part = Partition.from_assignment([0, 0, 0, 1, 1, 1], 2)
    x, y = _xy(6)
    b = build_batch(a, x, y, part, [1], train_split=[0, 4])
    assert b.train_mask.tolist() == [False, True, False]
    assert b.n_train == 1


def test_build_batch_errors():
    a = path(4)
    part = Partition.from_assignment([0, 0, 1, 1], 2)
    x, y = _xy(4)
    for bad in ([], [0, 0], [2]):
        with pytest.raises(GraphInputError):
            build_batch(a, x, y, part, bad)


def test_epoch_covers_each_training_node_once():
    a = random_graph(50, 0.1, seed=3)
    part = random_partition(50, 7, seed=3)
    x, y = _xy(50)
    train = np.arange(0, 50, 3)
    seen = []
    for group in make_schedule(7, 3, seed=0, epoch=1).groups():
        b = build_batch(a, x, y, part, group, train_split=train)
        seen.extend(b.global_ids[b.train_mask].tolist())
    assert sorted(seen) == train.tolist()


def test_q1_nnz_sum_equals_block_diagonal():
    a = random_graph(80, 0.06, seed=4)
    part = metis_like_partition(a, 5, seed=0)
    x, y = _xy(80)
    dense = a.to_dense()
    delta = sum(1 for i, j in zip(*np.nonzero(dense)) if part.assignment[i] != part.assignment[j])
    total = sum(build_batch(a, x, y, part, [t]).adj.nnz for t in range(5))
    assert total == a.nnz - delta
    assert build_batch(a, x, y, part, range(5)).adj.nnz == a.nnz


def test_batch_label_entropy_examples():
    a = random_graph(40, 0.1, seed=5)
    x, _ = _xy(40)
    part = random_partition(40, 4, seed=5)
    same = [build_batch(a, x, np.zeros(40, dtype=int), part, [t]) for t in range(4)]
    assert batch_label_entropy(same) == [0.0] * 4
    y = np.arange(400) % 2
    big = random_graph(400, 0.01, seed=6)
    part = random_partition(400, 4, seed=6)
    ents = batch_label_entropy([build_batch(big, np.zeros((400, 1)), y, part, [t]) for t in range(4)])
    assert np.allclose(ents, math.log(2), atol=0.02)


def test_multi_cluster_batches_raise_mean_entropy():
    higher = 0
    for seed in range(10):
        a, block = sbm_graph([60] * 5, 0.15, 0.005, seed)
        x = np.zeros((300, 1))
        part = metis_like_partition(a, 10, seed)
        one = [build_batch(a, x, block, part, [t]) for t in range(10)]
        five = [build_batch(a, x, block, part, g) for g in make_schedule(10, 5, seed, 0).groups()]
        higher += np.mean(batch_label_entropy(five)) >= np.mean(batch_label_entropy(one))
    assert higher == 10
