"""CSR sparse matrices and the adjacency normalizations used for propagation."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp


class GraphInputError(ValueError):
    """Raised on malformed graph / matrix input."""


@dataclass(frozen=True)
class SparseMatrix:
    """Compressed sparse row matrix with sorted, duplicate-free columns per row.

    Dense matrices elsewhere in the package are plain ``float64`` numpy arrays.
    """

    n_rows: int
    n_cols: int
    row_offsets: np.ndarray
    col_indices: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        offsets = np.asarray(self.row_offsets, dtype=np.int64)
        cols = np.asarray(self.col_indices, dtype=np.int64)
        vals = np.asarray(self.values, dtype=np.float64)
        object.__setattr__(self, "row_offsets", offsets)
        object.__setattr__(self, "col_indices", cols)
        object.__setattr__(self, "values", vals)
        if offsets.shape != (self.n_rows + 1,) or offsets[0] != 0:
            raise GraphInputError("row_offsets must have length n_rows+1 and start at 0")
        if np.any(np.diff(offsets) < 0):
            raise GraphInputError("row_offsets must be non-decreasing")
        if offsets[-1] != len(cols) or len(cols) != len(vals):
            raise GraphInputError("row_offsets[-1], len(col_indices), len(values) disagree")
        if len(cols) and (cols.min() < 0 or cols.max() >= self.n_cols):
            raise GraphInputError("column index out of range")
        if len(cols) > 1:
            # strictly increasing within each row
            steps = np.diff(cols)
            row_starts = np.zeros(len(cols), dtype=bool)
            row_starts[offsets[1:-1][offsets[1:-1] < len(cols)]] = True
            if np.any((steps <= 0) & ~row_starts[1:]):
                raise GraphInputError("column indices must be strictly increasing within a row")

    @property
    def shape(self) -> tuple[int, int]:
        return (self.n_rows, self.n_cols)

    @property
    def nnz(self) -> int:
        return int(self.row_offsets[-1])

    def row_ids(self) -> np.ndarray:
        """Row index of every stored entry."""
        return np.repeat(np.arange(self.n_rows), np.diff(self.row_offsets))

    def degrees(self) -> np.ndarray:
        """Row sums."""
        return np.bincount(self.row_ids(), weights=self.values, minlength=self.n_rows)

    def diagonal(self) -> np.ndarray:
        rows = self.row_ids()
        on_diag = rows == self.col_indices
        out = np.zeros(min(self.shape))
        out[rows[on_diag]] = self.values[on_diag]
        return out

    def to_scipy(self) -> sp.csr_matrix:
        return sp.csr_matrix(
            (self.values, self.col_indices, self.row_offsets), shape=self.shape
        )

    def to_dense(self) -> np.ndarray:
        return self.to_scipy().toarray()

    def transpose(self) -> SparseMatrix:
        return from_scipy(self.to_scipy().T)

    def is_symmetric(self, tol: float = 0.0) -> bool:
        if self.n_rows != self.n_cols:
            return False
        diff = self.to_scipy() - self.to_scipy().T
        return diff.nnz == 0 or float(np.abs(diff.data).max()) <= tol


def from_scipy(m) -> SparseMatrix:
    m = sp.csr_matrix(m, dtype=np.float64)
    m.sum_duplicates()
    m.sort_indices()
    return SparseMatrix(m.shape[0], m.shape[1], m.indptr, m.indices, m.data)


def from_dense(a) -> SparseMatrix:
    return from_scipy(sp.csr_matrix(np.asarray(a, dtype=np.float64)))


def identity(n: int) -> SparseMatrix:
    return SparseMatrix(n, n, np.arange(n + 1), np.arange(n), np.ones(n))


def from_edges(edges, n: int) -> SparseMatrix:
    """Symmetric binary adjacency from an undirected edge list.

    Both directions are stored, repeated edges collapse to one, self-loops are
    dropped.
    """
    e = np.asarray(list(edges) if not isinstance(edges, np.ndarray) else edges, dtype=np.int64)
    if e.size == 0:
        return SparseMatrix(n, n, np.zeros(n + 1), np.zeros(0), np.zeros(0))
    e = e.reshape(-1, 2)
    if e.min() < 0 or e.max() >= n:
        bad = e[(e < 0).any(axis=1) | (e >= n).any(axis=1)][0]
        raise GraphInputError(f"edge ({bad[0]}, {bad[1]}) has node id outside [0, {n})")
    e = e[e[:, 0] != e[:, 1]]
    pairs = np.unique(np.sort(e, axis=1), axis=0)
    rows = np.concatenate([pairs[:, 0], pairs[:, 1]])
    cols = np.concatenate([pairs[:, 1], pairs[:, 0]])
    m = sp.csr_matrix((np.ones(len(rows)), (rows, cols)), shape=(n, n))
    return from_scipy(m)


def edge_list(a: SparseMatrix) -> np.ndarray:
    """Upper-triangular (i < j) edge pairs of a symmetric matrix."""
    rows = a.row_ids()
    keep = rows < a.col_indices
    return np.stack([rows[keep], a.col_indices[keep]], axis=1)


def _require_square(a: SparseMatrix):
    if a.n_rows != a.n_cols:
        raise GraphInputError(f"expected a square matrix, got {a.n_rows}x{a.n_cols}")


def add_identity(a: SparseMatrix, scale: float = 1.0) -> SparseMatrix:
    _require_square(a)
    return from_scipy(a.to_scipy() + scale * sp.identity(a.n_rows, format="csr"))


def scale_rows(a: SparseMatrix, factors) -> SparseMatrix:
    factors = np.asarray(factors, dtype=np.float64)
    return SparseMatrix(
        a.n_rows, a.n_cols, a.row_offsets, a.col_indices,
        a.values * factors[a.row_ids()],
    )


def scale_cols(a: SparseMatrix, factors) -> SparseMatrix:
    factors = np.asarray(factors, dtype=np.float64)
    return SparseMatrix(
        a.n_rows, a.n_cols, a.row_offsets, a.col_indices,
        a.values * factors[a.col_indices],
    )


def row_normalize_aug(a: SparseMatrix) -> SparseMatrix:
    """(D + I)^-1 (A + I) with D the degree matrix of ``a`` itself."""
    _require_square(a)
    deg = a.degrees()
    return scale_rows(add_identity(a), 1.0 / (deg + 1.0))


def sym_normalize_aug(a: SparseMatrix) -> SparseMatrix:
    """D~^-1/2 (A + I) D~^-1/2 where D~ is the degree matrix of A + I."""
    _require_square(a)
    aug = add_identity(a)
    inv_sqrt = 1.0 / np.sqrt(aug.degrees())
    return scale_cols(scale_rows(aug, inv_sqrt), inv_sqrt)


NORMALIZERS = {"row": row_normalize_aug, "sym": sym_normalize_aug}


def normalize(a: SparseMatrix, mode: str) -> SparseMatrix:
    try:
        fn = NORMALIZERS[mode]
    except KeyError:
        raise GraphInputError(f"unknown normalization mode {mode!r}") from None
    return fn(a)


def spmm(a: SparseMatrix, x: np.ndarray) -> np.ndarray:
    """Sparse @ dense. Per-row accumulation runs in stored column order."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or a.n_cols != x.shape[0]:
        raise GraphInputError(
            f"spmm shape mismatch: {a.n_rows}x{a.n_cols} @ {x.shape}"
        )
    return np.asarray(a.to_scipy() @ x)


def extract_submatrix(a: SparseMatrix, nodes) -> SparseMatrix:
    """Rows and columns of ``a`` restricted to ``nodes``, in the given order."""
    nodes = np.asarray(nodes, dtype=np.int64).reshape(-1)
    if len(nodes) and (nodes.min() < 0 or nodes.max() >= a.n_rows or nodes.max() >= a.n_cols):
        raise GraphInputError("node id out of range in submatrix selection")
    if len(np.unique(nodes)) != len(nodes):
        raise GraphInputError("duplicate node id in submatrix selection")
    if len(nodes) == 0:
        return SparseMatrix(0, 0, np.zeros(1), np.zeros(0), np.zeros(0))
    return from_scipy(a.to_scipy()[nodes][:, nodes])
