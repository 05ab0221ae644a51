"""User-item bipartite adjacency, its symmetric normalisation and node dropout."""
from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .dataset import InteractionDataset
from .errors import DataError, GraphError
from .numeric import SparseMatrix

__all__ = [
    "NormalizedLaplacian",
    "SparseMatrix",
    "build_adjacency",
    "build_laplacian",
    "laplacian_for",
    "node_dropout",
    "save_csr",
    "load_csr",
]


@dataclass(frozen=True, eq=False)
class NormalizedLaplacian:
    """``D^-1/2 A D^-1/2`` over ``n_users + n_items`` nodes (users first)."""

    lap: SparseMatrix
    degrees: np.ndarray
    n_users: int

    @property
    def n_nodes(self) -> int:
        return self.lap.n_rows

    @property
    def n_items(self) -> int:
        return self.n_nodes - self.n_users


def build_adjacency(ds: InteractionDataset) -> SparseMatrix:
    """Symmetric 0/1 matrix with ``A[u, N+i] = A[N+i, u] = 1`` for each train pair."""
    n = ds.n_users + ds.n_items
    u, i = ds.train_pairs()
    deg = np.bincount(np.concatenate([u, ds.n_users + i]), minlength=n)
    empty = np.flatnonzero(deg == 0)
    if empty.size:
        node = int(empty[0])
        kind = f"user {node}" if node < ds.n_users else f"item {node - ds.n_users}"
        raise GraphError(f"{kind} has no training interactions ({empty.size} isolated node(s))")
    rows = np.concatenate([u, ds.n_users + i])
    cols = np.concatenate([ds.n_users + i, u])
    return SparseMatrix.from_coo(rows, cols, np.ones(len(rows)), (n, n))


def build_laplacian(A: SparseMatrix, n_users: int | None = None) -> NormalizedLaplacian:
    if A.n_rows != A.n_cols:
        raise GraphError("adjacency must be square")
    degrees = np.diff(A.row_offsets)
    zero = np.flatnonzero(degrees == 0)
    if zero.size:
        raise GraphError(f"node {int(zero[0])} has degree 0")
    if np.any(A.row_ids() == A.col_indices):
        raise GraphError("adjacency must have a zero diagonal")
    inv_sqrt = 1.0 / np.sqrt(degrees.astype(np.float64))
    values = A.values * inv_sqrt[A.row_ids()] * inv_sqrt[A.col_indices]
    return NormalizedLaplacian(A.with_values(values), degrees, A.n_rows if n_users is None else n_users)


def laplacian_for(ds: InteractionDataset) -> NormalizedLaplacian:
    return build_laplacian(build_adjacency(ds), ds.n_users)


def drop_nodes(S: SparseMatrix, dropped: np.ndarray, scale: float) -> SparseMatrix:
    """Remove every entry whose row or column is flagged in ``dropped``; scale the rest."""
    keep = ~(dropped[S.row_ids()] | dropped[S.col_indices])
    counts = np.bincount(S.row_ids()[keep], minlength=S.n_rows)
    offsets = np.zeros(S.n_rows + 1, dtype=np.int64)
    np.cumsum(counts, out=offsets[1:])
    return SparseMatrix(S.n_rows, S.n_cols, offsets, S.col_indices[keep], S.values[keep] * scale)


def sample_dropped_nodes(n_nodes: int, p2: float, rng: np.random.Generator) -> np.ndarray:
    if not 0.0 <= p2 < 1.0:
        raise ValueError(f"node dropout ratio must lie in [0, 1), got {p2}")
    dropped = np.zeros(n_nodes, dtype=bool)
    n_drop = int(np.floor(n_nodes * p2 + 1e-9))
    if n_drop:
        dropped[rng.choice(n_nodes, size=n_drop, replace=False)] = True
    return dropped


def node_dropout(L: NormalizedLaplacian | SparseMatrix, p2: float, rng: np.random.Generator) -> SparseMatrix:
    """Drop ``floor(n * p2)`` nodes uniformly and rescale survivors by ``1 / (1 - p2)``.

    The identity (self-connection) term lives outside the Laplacian, so a
    dropped node still keeps its own features in the propagation rule.
    """
    S = L.lap if isinstance(L, NormalizedLaplacian) else L
    dropped = sample_dropped_nodes(S.n_rows, p2, rng)
    if not dropped.any():
        return S
    return drop_nodes(S, dropped, 1.0 / (1.0 - p2))


_HEADER = struct.Struct("<QQQ")


def save_csr(S: SparseMatrix, path: str | Path) -> None:
    """Binary cache: ``n_rows, n_cols, nnz`` as u64 LE, then offsets/indices (i64 LE) and values (f64 LE)."""
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(S.n_rows, S.n_cols, S.nnz))
        fh.write(S.row_offsets.astype("<i8").tobytes())
        fh.write(S.col_indices.astype("<i8").tobytes())
        fh.write(S.values.astype("<f8").tobytes())


def load_csr(path: str | Path) -> SparseMatrix:
    blob = Path(path).read_bytes()
    if len(blob) < _HEADER.size:
        raise DataError(f"{path}: truncated CSR header")
    n_rows, n_cols, nnz = _HEADER.unpack_from(blob)
    expected = _HEADER.size + 8 * (n_rows + 1) + 16 * nnz
    if len(blob) != expected:
        raise DataError(f"{path}: expected {expected} bytes, found {len(blob)}")
    off = _HEADER.size
    offsets = np.frombuffer(blob, "<i8", n_rows + 1, off).astype(np.int64)
    off += 8 * (n_rows + 1)
    cols = np.frombuffer(blob, "<i8", nnz, off).astype(np.int64)
    off += 8 * nnz
    values = np.frombuffer(blob, "<f8", nnz, off).astype(np.float64)
    S = SparseMatrix(int(n_rows), int(n_cols), offsets, cols, values)
    S.validate()
    return S
