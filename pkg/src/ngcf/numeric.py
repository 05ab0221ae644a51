"""Dense/sparse kernels, activations, initialisers and seeding.

Dense matrices are plain 2-D numpy arrays (float32 for training, float64
in gradient-check mode). Sparse matrices use the compressed-row layout in
:class:`SparseMatrix`.
"""
from __future__ import annotations

from dataclasses import dataclass

import numba
import numpy as np

from .errors import DivergenceError, ShapeError

SUBSYSTEMS = ("dataset", "init", "dropout", "sampling")


@dataclass(frozen=True, eq=False)
class SparseMatrix:
    """Compressed sparse row matrix with float64 values."""

    n_rows: int
    n_cols: int
    row_offsets: np.ndarray
    col_indices: np.ndarray
    values: np.ndarray

    @property
    def nnz(self) -> int:
        return int(self.col_indices.shape[0])

    @property
    def shape(self) -> tuple[int, int]:
        return (self.n_rows, self.n_cols)

    @classmethod
    def from_coo(cls, rows, cols, values, shape: tuple[int, int]) -> "SparseMatrix":
        """Build from coordinate triples. Duplicate coordinates are summed."""
        n_rows, n_cols = shape
        rows = np.asarray(rows, dtype=np.int64)
        cols = np.asarray(cols, dtype=np.int64)
        values = np.asarray(values, dtype=np.float64)
        if not rows.shape == cols.shape == values.shape:
            raise ShapeError("rows, cols and values must have equal length")
        if rows.size and (rows.min() < 0 or rows.max() >= n_rows or cols.min() < 0 or cols.max() >= n_cols):
            raise ShapeError("coordinate out of range")
        order = np.lexsort((cols, rows))
        rows, cols, values = rows[order], cols[order], values[order]
        if rows.size:
            key = rows * n_cols + cols
            first = np.concatenate(([True], key[1:] != key[:-1]))
            starts = np.flatnonzero(first)
            values = np.add.reduceat(values, starts)
            rows, cols = rows[starts], cols[starts]
        offsets = np.zeros(n_rows + 1, dtype=np.int64)
        np.cumsum(np.bincount(rows, minlength=n_rows), out=offsets[1:])
        return cls(n_rows, n_cols, offsets, cols, values)

    @classmethod
    def from_dense(cls, dense: np.ndarray) -> "SparseMatrix":
        rows, cols = np.nonzero(dense)
        return cls.from_coo(rows, cols, dense[rows, cols], dense.shape)

    def row_ids(self) -> np.ndarray:
        """Row index of every stored entry."""
        return np.repeat(np.arange(self.n_rows, dtype=np.int64), np.diff(self.row_offsets))

    def to_dense(self) -> np.ndarray:
        out = np.zeros(self.shape, dtype=np.float64)
        out[self.row_ids(), self.col_indices] = self.values
        return out

    def transpose(self) -> "SparseMatrix":
        return SparseMatrix.from_coo(self.col_indices, self.row_ids(), self.values, (self.n_cols, self.n_rows))

    def with_values(self, values: np.ndarray) -> "SparseMatrix":
        return SparseMatrix(self.n_rows, self.n_cols, self.row_offsets, self.col_indices, values)

    def validate(self) -> None:
        if self.row_offsets.shape != (self.n_rows + 1,) or self.row_offsets[0] != 0:
            raise ShapeError("row_offsets must have length n_rows + 1 and start at 0")
        if np.any(np.diff(self.row_offsets) < 0) or self.row_offsets[-1] != self.nnz:
            raise ShapeError("row_offsets must be nondecreasing and end at nnz")
        if self.values.shape != self.col_indices.shape:
            raise ShapeError("values and col_indices differ in length")
        if self.nnz:
            if self.col_indices.min() < 0 or self.col_indices.max() >= self.n_cols:
                raise ShapeError("column index out of range")
            # strictly increasing within a row: a non-increase is only allowed at a row start
            steps = np.diff(self.col_indices) <= 0
            row_start = np.zeros(self.nnz, dtype=bool)
            row_start[self.row_offsets[1:-1][self.row_offsets[1:-1] < self.nnz]] = True
            if np.any(steps & ~row_start[1:]):
                raise ShapeError("column indices must be strictly increasing within each row")
        if not np.all(np.isfinite(self.values)):
            raise ShapeError("non-finite sparse value")

    def equals(self, other: "SparseMatrix") -> bool:
        return (
            self.shape == other.shape
            and np.array_equal(self.row_offsets, other.row_offsets)
            and np.array_equal(self.col_indices, other.col_indices)
            and np.array_equal(self.values, other.values)
        )


@numba.njit(cache=True, nogil=True)
def _csr_spmm(offsets, cols, vals, X, out):
    d = X.shape[1]
    for r in range(offsets.shape[0] - 1):
        for k in range(offsets[r], offsets[r + 1]):
            v = vals[k]
            c = cols[k]
            for j in range(d):
                out[r, j] += v * X[c, j]


def spmm(S: SparseMatrix, X: np.ndarray) -> np.ndarray:
    """Sparse-dense product ``S @ X`` computed in ``X.dtype``.

    Work is proportional to ``nnz(S) * X.shape[1]``. Each output row is
    accumulated sequentially in storage order, so results are
    bit-reproducible.
    """
    if X.ndim != 2 or S.n_cols != X.shape[0]:
        raise ShapeError(f"spmm shape mismatch: {S.shape} x {X.shape}")
    out = np.zeros((S.n_rows, X.shape[1]), dtype=X.dtype)
    if S.nnz == 0 or X.shape[1] == 0:
        return out
    vals = S.values.astype(X.dtype, copy=False)
    _csr_spmm(S.row_offsets, S.col_indices, vals, np.ascontiguousarray(X), out)
    return out


def scatter_add_rows(n_rows: int, index: np.ndarray, values: np.ndarray) -> np.ndarray:
    """``out[index[k]] += values[k]`` as a selection-matrix product (fixed summation order)."""
    index = np.asarray(index, dtype=np.int64)
    sel = SparseMatrix.from_coo(index, np.arange(len(index)), np.ones(len(index)), (n_rows, len(index)))
    return spmm(sel, values)


def matmul(A: np.ndarray, B: np.ndarray) -> np.ndarray:
    if A.ndim != 2 or B.ndim != 2 or A.shape[1] != B.shape[0]:
        raise ShapeError(f"matmul shape mismatch: {A.shape} x {B.shape}")
    return A @ B


def hadamard(A: np.ndarray, B: np.ndarray) -> np.ndarray:
    if A.shape != B.shape:
        raise ShapeError(f"hadamard shape mismatch: {A.shape} vs {B.shape}")
    return A * B


def leaky_relu(X, slope: float = 0.2):
    X = np.asarray(X)
    return np.where(X >= 0, X, slope * X)


def leaky_relu_grad(X, slope: float = 0.2):
    """Elementwise derivative; the subgradient at exactly 0 is taken as 1."""
    X = np.asarray(X)
    dtype = X.dtype if X.dtype.kind == "f" else np.float64
    return np.where(X >= 0, dtype.type(1.0), dtype.type(slope))


def sigmoid(x):
    """Logistic function, stable for large ``|x|``."""
    x = np.asarray(x, dtype=np.float64) if np.isscalar(x) else np.asarray(x)
    out = np.exp(-np.logaddexp(0.0, -x))
    return float(out) if out.ndim == 0 else out


def softplus(x):
    """``log(1 + exp(x))`` without overflow."""
    out = np.logaddexp(0.0, x)
    return float(out) if np.ndim(out) == 0 else out


def xavier_init(n_rows: int, n_cols: int, rng: np.random.Generator, dtype=np.float32) -> np.ndarray:
    """Glorot-uniform samples on ``[-a, a]`` with ``a = sqrt(6 / (n_rows + n_cols))``."""
    if n_rows < 1 or n_cols < 1:
        raise ShapeError("xavier_init dims must be >= 1")
    bound = np.sqrt(6.0 / (n_rows + n_cols))
    return rng.uniform(-bound, bound, size=(n_rows, n_cols)).astype(dtype)


def dropout_mask(n_rows: int, n_cols: int, p: float, rng: np.random.Generator, dtype=np.float32) -> np.ndarray:
    """Inverted-dropout mask: 0 with probability ``p``, else ``1 / (1 - p)``."""
    if not 0.0 <= p < 1.0:
        raise ValueError(f"dropout ratio must lie in [0, 1), got {p}")
    if p == 0.0:
        return np.ones((n_rows, n_cols), dtype=dtype)
    keep = rng.random((n_rows, n_cols)) >= p
    return (keep / (1.0 - p)).astype(dtype)


def check_finite(X: np.ndarray, what: str, layer: int | None = None) -> None:
    if not np.all(np.isfinite(X)):
        where = f" at layer {layer}" if layer is not None else ""
        raise DivergenceError(f"non-finite values in {what}{where}", layer=layer)


def make_rng(seed: int, subsystem: str | None = None) -> np.random.Generator:
    """Seeded PCG64 stream; ``subsystem`` selects an independent child stream."""
    if subsystem is None:
        return np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed)))
    key = SUBSYSTEMS.index(subsystem)
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed, spawn_key=(key,))))
