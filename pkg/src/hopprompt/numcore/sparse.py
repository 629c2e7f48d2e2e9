"""Canonical CSR matrices and sparse-dense products recorded on the tape.

scipy.sparse supplies the multiply kernel; the CSR arrays here are the source
of truth and the dense `densify` path exists for oracle checks.
"""

from __future__ import annotations

import numpy as np
from scipy import sparse as _scipy_sparse

from ..errors import DimensionError, StructuralError
from .tensor import Tensor, _record, matmul, transpose, add


class SparseMatrix:
    """Immutable CSR matrix with strictly increasing column indices per row."""

    __slots__ = ("shape", "row_offsets", "col_indices", "values")

    def __init__(self, shape, row_offsets, col_indices, values):
        rows, cols = int(shape[0]), int(shape[1])
        offs = np.asarray(row_offsets, dtype=np.int64)
        idx = np.asarray(col_indices, dtype=np.int64)
        vals = np.asarray(values, dtype=np.float64)
        if rows < 0 or cols < 0:
            raise StructuralError(f"negative shape {shape}")
        if offs.shape != (rows + 1,):
            raise StructuralError(f"row_offsets length {offs.shape} != rows+1 ({rows + 1})")
        if offs[0] != 0 or offs[-1] != idx.size or np.any(np.diff(offs) < 0):
            raise StructuralError("row_offsets must start at 0, be nondecreasing, end at nnz")
        if idx.size != vals.size:
            raise StructuralError(f"{idx.size} column indices but {vals.size} values")
        if idx.size and (idx.min() < 0 or idx.max() >= cols):
            raise StructuralError(f"column index outside [0, {cols})")
        for r in range(rows):
            seg = idx[offs[r]:offs[r + 1]]
            if seg.size > 1 and np.any(np.diff(seg) <= 0):
                raise StructuralError(f"row {r}: column indices not strictly increasing")
        if not np.isfinite(vals).all():
            raise StructuralError("non-finite values in sparse matrix")
        self.shape = (rows, cols)
        self.row_offsets = offs
        self.col_indices = idx
        self.values = vals

    @classmethod
    def from_coo(cls, shape, rows, cols, values) -> "SparseMatrix":
        """Build from (possibly unsorted, duplicate-free) triplets."""
        rows = np.asarray(rows, dtype=np.int64)
        cols = np.asarray(cols, dtype=np.int64)
        values = np.asarray(values, dtype=np.float64)
        order = np.lexsort((cols, rows))
        rows, cols, values = rows[order], cols[order], values[order]
        offs = np.zeros(shape[0] + 1, dtype=np.int64)
        np.add.at(offs, rows + 1, 1)
        offs = np.cumsum(offs)
        return cls(shape, offs, cols, values)

    @property
    def nnz(self) -> int:
        return self.col_indices.size

    def nnz_rows(self) -> np.ndarray:
        """Row index of each stored entry."""
        return np.repeat(np.arange(self.shape[0], dtype=np.int64),
                         np.diff(self.row_offsets))

    def densify(self) -> np.ndarray:
        out = np.zeros(self.shape)
        out[self.nnz_rows(), self.col_indices] = self.values
        return out

    def submatrix(self, ids) -> "SparseMatrix":
        """Induced square submatrix on the given node ids (kept in given order)."""
        ids = np.asarray(ids, dtype=np.int64)
        m = self._scipy(self.values)[ids][:, ids].tocsr()
        m.sort_indices()
        return SparseMatrix((ids.size, ids.size), m.indptr, m.indices, m.data)

    def _scipy(self, values: np.ndarray):
        return _scipy_sparse.csr_matrix(
            (values, self.col_indices, self.row_offsets), shape=self.shape
        )

    def __repr__(self):
        return f"SparseMatrix(shape={self.shape}, nnz={self.nnz})"


def spmm(s: SparseMatrix, d: Tensor, values: Tensor | None = None) -> Tensor:
    """Sparse @ dense. Pass `values` (nnz, 1) to make the entries trainable."""
    if s.shape[1] != d.rows:
        raise DimensionError(f"spmm: inner dims differ, {s.shape} x {d.shape}")
    if values is not None and values.shape != (s.nnz, 1):
        raise DimensionError(
            f"spmm: values override must be ({s.nnz}, 1), got {values.shape}"
        )
    val_arr = s.values if values is None else values.data[:, 0]
    mat = s._scipy(val_arr)
    dd = d.data
    rows_of = s.nnz_rows()
    cols_of = s.col_indices

    def vjp(g):
        dd_grad = mat.T @ g
        if values is None:
            return (dd_grad,)
        dval = np.einsum("ij,ij->i", g[rows_of], dd[cols_of])
        return dd_grad, dval[:, None]

    parents = (d,) if values is None else (d, values)
    return _record(mat @ dd, parents, vjp)


def rank_one_update_spmm(s: SparseMatrix, p: Tensor, q: Tensor, d: Tensor,
                         values: Tensor | None = None) -> Tensor:
    """(s + p q^T) @ d without materializing the dense rank-one term."""
    n = s.shape[0]
    if s.shape[1] != n:
        raise DimensionError(f"rank_one_update_spmm: matrix must be square, got {s.shape}")
    if p.shape != (n, 1) or q.shape != (n, 1):
        raise DimensionError(
            f"rank_one_update_spmm: p, q must be ({n}, 1), got {p.shape}, {q.shape}"
        )
    if d.rows != n:
        raise DimensionError(f"rank_one_update_spmm: d has {d.rows} rows, expected {n}")
    return add(spmm(s, d, values=values), matmul(p, matmul(transpose(q), d)))
