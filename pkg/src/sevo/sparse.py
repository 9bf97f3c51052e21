"""Compressed sparse row matrices and the propagation kernel.

Dense matrices are plain 2-D ``float64`` numpy arrays throughout the package.
"""
from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

DENSE_CAP = 4096
WORKERS_ENV = "SEVO_NUM_WORKERS"


class ShapeError(ValueError):
    """Operand shapes are incompatible."""


class DenseCapError(ValueError):
    """Refusal to materialize a matrix larger than the dense cap."""


class ValidationError(ValueError):
    """Input violates a documented precondition."""


@dataclass(frozen=True, eq=False)
class CsrMatrix:
    """Immutable CSR matrix with strictly increasing columns per row."""

    n_rows: int
    n_cols: int
    row_offsets: np.ndarray
    col_indices: np.ndarray
    values: np.ndarray
    _scipy: sp.csr_matrix = field(init=False, repr=False)

    def __post_init__(self):
        offsets = np.ascontiguousarray(self.row_offsets, dtype=np.int64)
        cols = np.ascontiguousarray(self.col_indices, dtype=np.int64)
        vals = np.ascontiguousarray(self.values, dtype=np.float64)
        if self.n_rows < 0 or self.n_cols < 0:
            raise ValidationError("negative matrix dimension")
        if offsets.shape != (self.n_rows + 1,):
            raise ValidationError("row_offsets must have length n_rows + 1")
        if offsets[0] != 0 or offsets[-1] != len(cols) or len(cols) != len(vals):
            raise ValidationError("row_offsets inconsistent with stored entries")
        if np.any(np.diff(offsets) < 0):
            raise ValidationError("row_offsets must be non-decreasing")
        if len(cols):
            if cols.min() < 0 or cols.max() >= self.n_cols:
                raise ValidationError("column index out of range")
            # strictly increasing inside each row: every backward step must be a row start
            steps = np.flatnonzero(np.diff(cols) <= 0) + 1
            row_starts = offsets[1:-1]
            if not np.all(np.isin(steps, row_starts)):
                raise ValidationError("column indices must be strictly increasing within a row")
        for name, arr in (("row_offsets", offsets), ("col_indices", cols), ("values", vals)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        mat = sp.csr_matrix((vals, cols, offsets), shape=(self.n_rows, self.n_cols))
        mat.has_sorted_indices = True
        object.__setattr__(self, "_scipy", mat)

    @property
    def shape(self):
        return (self.n_rows, self.n_cols)

    @property
    def nnz(self):
        return len(self.values)

    def to_scipy(self) -> sp.csr_matrix:
        """Read-only view as a scipy CSR matrix (shares storage)."""
        return self._scipy

    def transpose(self) -> "CsrMatrix":
        return from_scipy(self._scipy.T)

    def diagonal(self) -> np.ndarray:
        return self._scipy.diagonal()

    def __repr__(self):
        return f"CsrMatrix(shape={self.shape}, nnz={self.nnz})"


def from_scipy(mat) -> CsrMatrix:
    """Canonicalize any scipy sparse matrix (sums duplicates, sorts columns)."""
    csr = sp.csr_matrix(mat, dtype=np.float64, copy=True)
    csr.sum_duplicates()
    csr.sort_indices()
    return CsrMatrix(csr.shape[0], csr.shape[1], csr.indptr, csr.indices, csr.data)


def from_dense(x, keep_zeros=False) -> CsrMatrix:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2:
        raise ShapeError("expected a 2-D array")
    csr = sp.csr_matrix(x)
    if not keep_zeros:
        csr.eliminate_zeros()
    return from_scipy(csr)


def from_triplets(n_rows, n_cols, rows, cols, vals) -> CsrMatrix:
    """Build from coordinate triplets; duplicate coordinates are summed."""
    coo = sp.coo_matrix(
        (np.asarray(vals, dtype=np.float64), (np.asarray(rows, dtype=np.int64), np.asarray(cols, dtype=np.int64))),
        shape=(n_rows, n_cols),
    )
    return from_scipy(coo.tocsr())


def identity(n) -> CsrMatrix:
    return CsrMatrix(n, n, np.arange(n + 1), np.arange(n), np.ones(n))


def empty(n_rows, n_cols=None) -> CsrMatrix:
    n_cols = n_rows if n_cols is None else n_cols
    return CsrMatrix(n_rows, n_cols, np.zeros(n_rows + 1), np.zeros(0), np.zeros(0))


def num_workers() -> int:
    try:
        return max(1, int(os.environ.get(WORKERS_ENV, "1")))
    except ValueError:
        return 1


def spmm(a: CsrMatrix, x, workers=None) -> np.ndarray:
    """Sparse-dense product ``a @ x``.

    Each output row is accumulated sequentially in ascending column order, so
    the result does not depend on how rows are split across workers.
    """
    x = np.asarray(x, dtype=np.float64)
    squeeze = x.ndim == 1
    if squeeze:
        x = x[:, None]
    if x.ndim != 2 or a.n_cols != x.shape[0]:
        raise ShapeError(f"cannot multiply {a.shape} by {x.shape}")
    workers = num_workers() if workers is None else workers
    mat = a.to_scipy()
    if workers <= 1 or a.n_rows < 2 * workers:
        out = np.asarray(mat @ x)
    else:
        bounds = np.linspace(0, a.n_rows, workers + 1).astype(int)
        out = np.empty((a.n_rows, x.shape[1]))

        def run(k):
            lo, hi = bounds[k], bounds[k + 1]
            out[lo:hi] = mat[lo:hi] @ x

        with ThreadPoolExecutor(workers) as pool:
            list(pool.map(run, range(workers)))
    return out[:, 0] if squeeze else out


def to_dense(a: CsrMatrix, cap=DENSE_CAP) -> np.ndarray:
    if a.n_rows > cap or a.n_cols > cap:
        raise DenseCapError(f"{a.shape} exceeds dense cap {cap}x{cap}")
    return a.to_scipy().toarray()


def is_symmetric(a: CsrMatrix, tol=1e-10) -> bool:
    if a.n_rows != a.n_cols:
        return False
    diff = a.to_scipy() - a.to_scipy().T
    return diff.nnz == 0 or float(np.max(np.abs(diff.data), initial=0.0)) <= tol


def symmetric_eigen_bounds(a: CsrMatrix, cap=DENSE_CAP, tol=1e-10):
    """Smallest and largest eigenvalue of a symmetric matrix via a dense solver."""
    if not is_symmetric(a, tol):
        raise ValidationError("matrix is not symmetric within tolerance")
    eig = np.linalg.eigvalsh(to_dense(a, cap))
    if len(eig) == 0:
        raise ValidationError("empty matrix has no eigenvalues")
    return float(eig[0]), float(eig[-1])
