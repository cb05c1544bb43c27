"""Seeded synthetic graphs: stochastic block models and labeled SBM datasets."""

from __future__ import annotations

import numpy as np

from .data import Dataset
from .sparse import SparseMatrix, from_edges


def sbm_graph(sizes, p_in: float, p_out: float, seed: int) -> tuple[SparseMatrix, np.ndarray]:
    """Each pair is linked independently with ``p_in`` inside a block, ``p_out`` across."""
    rng = np.random.default_rng(seed)
    n = int(sum(sizes))
    block = np.repeat(np.arange(len(sizes)), sizes)
    iu, ju = np.triu_indices(n, 1)
    prob = np.where(block[iu] == block[ju], p_in, p_out)
    keep = rng.random(len(prob)) < prob
    return from_edges(np.stack([iu[keep], ju[keep]], axis=1), n), block


def erdos_renyi(n: int, p: float, seed: int) -> SparseMatrix:
    return sbm_graph([n], p, p, seed)[0]


def sbm_dataset(sizes, p_in: float, p_out: float, n_features: int = 16,
                signal: float = 1.0, label_noise: float = 0.0,
                train_frac: float = 0.6, val_frac: float = 0.2, seed: int = 0) -> Dataset:
    """Block-labeled SBM with Gaussian features whose class means differ.

    ``label_noise`` is the fraction of nodes whose label is redrawn uniformly.
    """
    graph, block = sbm_graph(sizes, p_in, p_out, seed)
    rng = np.random.default_rng([seed, 1])
    k = len(sizes)
    labels = block.copy()
    flip = rng.random(len(labels)) < label_noise
    labels[flip] = rng.integers(0, k, size=int(flip.sum()))
    means = rng.normal(size=(k, n_features)) * signal
    x = means[labels] + rng.normal(size=(len(labels), n_features))
    order = rng.permutation(len(labels))
    n_train = int(round(train_frac * len(labels)))
    n_val = int(round(val_frac * len(labels)))
    splits = {
        "train": np.sort(order[:n_train]),
        "val": np.sort(order[n_train:n_train + n_val]),
        "test": np.sort(order[n_train + n_val:]),
    }
    return Dataset(graph, x, labels, splits)
