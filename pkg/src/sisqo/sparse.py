"""Sparse matrix and KKT operator types used by the iterative solvers.

Storage is canonical CSR (sorted, duplicate-free, int64 indices, float64
values).  Matrix-vector products dispatch to :mod:`sisqo.kernels`, so the
same objects run on the compiled core or the numpy fallback.
"""

import numpy as np

from . import kernels

__all__ = ["SparseMatrix", "KktOperator", "blend_with_identity",
           "frobenius_distance"]


class SparseMatrix:
    """Real sparse matrix in compressed sparse row form.

    Parameters
    ----------
    shape : tuple of int
        (rows, cols).  Zero rows are permitted (an empty constraint
        block); columns of an applied vector must still match.
    indptr, indices, data : array_like
        Canonical CSR arrays.  Column indices must be sorted within each
        row and duplicate (row, col) pairs are rejected.
    """

    __slots__ = ("rows", "cols", "indptr", "indices", "data")

    def __init__(self, shape, indptr, indices, data):
        rows, cols = (int(shape[0]), int(shape[1]))
        if rows < 0 or cols < 0:
            raise ValueError("matrix dimensions must be non-negative")
        indptr = np.ascontiguousarray(indptr, dtype=np.int64)
        indices = np.ascontiguousarray(indices, dtype=np.int64)
        data = np.ascontiguousarray(data, dtype=np.float64)
        if indptr.shape != (rows + 1,) or indptr[0] != 0 or indptr[-1] != len(data):
            raise ValueError("malformed CSR indptr")
        if len(indices) != len(data):
            raise ValueError("indices and data length mismatch")
        if np.any(np.diff(indptr) < 0):
            raise ValueError("indptr must be non-decreasing")
        if len(indices) and (indices.min() < 0 or indices.max() >= cols):
            raise ValueError("column index out of range")
        for r in range(rows):
            lo, hi = indptr[r], indptr[r + 1]
            if hi - lo > 1:
                seg = indices[lo:hi]
                if np.any(np.diff(seg) <= 0):
                    raise ValueError(f"row {r} has unsorted or duplicate columns")
        self.rows = rows
        self.cols = cols
        self.indptr = indptr
        self.indices = indices
        self.data = data

    # -- constructors ------------------------------------------------

    @classmethod
    def from_triplets(cls, shape, rows_idx, cols_idx, values, sum_duplicates=False):
        """Build from COO triplets, sorting into canonical CSR.

        Duplicate (row, col) pairs raise unless ``sum_duplicates`` is
        set, in which case they are accumulated.
        """
        rows, cols = (int(shape[0]), int(shape[1]))
        ri = np.asarray(rows_idx, dtype=np.int64)
        ci = np.asarray(cols_idx, dtype=np.int64)
        vals = np.asarray(values, dtype=np.float64)
        if not (len(ri) == len(ci) == len(vals)):
            raise ValueError("triplet arrays must share a length")
        if len(ri):
            if ri.min() < 0 or ri.max() >= rows:
                raise ValueError("row index out of range")
            if ci.min() < 0 or ci.max() >= cols:
                raise ValueError("column index out of range")
        order = np.lexsort((ci, ri))
        ri, ci, vals = ri[order], ci[order], vals[order]
        if len(ri) > 1:
            dup = (np.diff(ri) == 0) & (np.diff(ci) == 0)
            if np.any(dup):
                if not sum_duplicates:
                    raise ValueError("duplicate (row, col) entries")
                keep = np.concatenate(([True], ~dup))
                group = np.cumsum(keep) - 1
                vals = np.bincount(group, weights=vals)
                ri, ci = ri[keep], ci[keep]
        indptr = np.zeros(rows + 1, dtype=np.int64)
        np.add.at(indptr, ri + 1, 1)
        np.cumsum(indptr, out=indptr)
        return cls((rows, cols), indptr, ci, vals)

    @classmethod
    def from_dense(cls, a, drop_tol=0.0):
        a = np.asarray(a, dtype=np.float64)
        ri, ci = np.nonzero(np.abs(a) > drop_tol)
        return cls.from_triplets(a.shape, ri, ci, a[ri, ci])

    @classmethod
    def identity(cls, n, scale=1.0):
        idx = np.arange(n, dtype=np.int64)
        return cls((n, n), np.arange(n + 1, dtype=np.int64), idx,
                   np.full(n, float(scale)))

    @classmethod
    def diagonal(cls, d):
        d = np.asarray(d, dtype=np.float64)
        n = d.shape[0]
        return cls((n, n), np.arange(n + 1, dtype=np.int64),
                   np.arange(n, dtype=np.int64), d)

    # -- properties --------------------------------------------------

    @property
    def shape(self):
        return (self.rows, self.cols)

    @property
    def nnz(self):
        return len(self.data)

    # -- products ----------------------------------------------------

    def apply(self, x, out=None):
        """A @ x."""
        x = np.ascontiguousarray(x, dtype=np.float64)
        if x.shape != (self.cols,):
            raise ValueError(f"expected vector of length {self.cols}")
        if out is None:
            out = np.empty(self.rows)
        kernels.csr_matvec(self.indptr, self.indices, self.data, x, out)
        return out

    def apply_transpose(self, x, out=None):
        """A.T @ x without forming the transpose."""
        x = np.ascontiguousarray(x, dtype=np.float64)
        if x.shape != (self.rows,):
            raise ValueError(f"expected vector of length {self.rows}")
        if out is None:
            out = np.empty(self.cols)
        kernels.csr_rmatvec(self.indptr, self.indices, self.data, x, out)
        return out

    # -- conversions and diagnostics ---------------------------------

    def to_dense(self):
        a = np.zeros((self.rows, self.cols))
        rows = np.repeat(np.arange(self.rows), np.diff(self.indptr))
        a[rows, self.indices] = self.data
        return a

    def triplets(self):
        """(row, col, value) arrays in canonical order."""
        rows = np.repeat(np.arange(self.rows, dtype=np.int64),
                         np.diff(self.indptr))
        return rows, self.indices.copy(), self.data.copy()

    def transpose(self):
        ri, ci, vals = self.triplets()
        return SparseMatrix.from_triplets((self.cols, self.rows), ci, ri, vals)

    def symmetry_defect(self):
        """max |A - A.T| over entries; 0 for a symmetric matrix."""
        if self.rows != self.cols:
            return np.inf
        at = self.transpose()
        if np.array_equal(self.indptr, at.indptr) and \
                np.array_equal(self.indices, at.indices):
            return float(np.max(np.abs(self.data - at.data))) if self.nnz else 0.0
        # patterns differ: compare through merged triplets
        ri, ci, va = self.triplets()
        rj, cj, vb = at.triplets()
        merged = SparseMatrix.from_triplets(
            self.shape, np.concatenate([ri, rj]), np.concatenate([ci, cj]),
            np.concatenate([va, -vb]), sum_duplicates=True)
        return float(np.max(np.abs(merged.data))) if merged.nnz else 0.0

    def __repr__(self):
        return f"SparseMatrix(shape={self.shape}, nnz={self.nnz})"


def blend_with_identity(h, iota):
    """iota * H + (1 - iota) * I for square H; exact at iota in {0, 1}."""
    if h.rows != h.cols:
        raise ValueError("blend requires a square matrix")
    if iota == 1.0:
        return h
    n = h.rows
    if iota == 0.0:
        return SparseMatrix.identity(n)
    ri, ci, vals = h.triplets()
    di = np.arange(n, dtype=np.int64)
    return SparseMatrix.from_triplets(
        (n, n),
        np.concatenate([ri, di]),
        np.concatenate([ci, di]),
        np.concatenate([iota * vals, np.full(n, 1.0 - iota)]),
        sum_duplicates=True,
    )


def frobenius_distance(a, b):
    """||A - B||_F for two sparse matrices of one shape."""
    if a.shape != b.shape:
        raise ValueError("shape mismatch")
    ri, ci, va = a.triplets()
    rj, cj, vb = b.triplets()
    merged = SparseMatrix.from_triplets(
        a.shape, np.concatenate([ri, rj]), np.concatenate([ci, cj]),
        np.concatenate([va, -vb]), sum_duplicates=True)
    return float(np.linalg.norm(merged.data)) if merged.nnz else 0.0


class KktOperator:
    """Symmetric saddle operator (u, d) -> (H u + J.T d, J u).

    H must be symmetric n-by-n; J is m-by-n with m possibly zero.  The
    operator is applied to stacked vectors of length n + m.
    """

    __slots__ = ("h", "j", "n", "m", "_sym_tol")

    def __init__(self, h, j, sym_tol=1e-12):
        if h.rows != h.cols:
            raise ValueError("H must be square")
        if j.cols != h.rows:
            raise ValueError("J column count must match H dimension")
        scale = max(1.0, float(np.max(np.abs(h.data))) if h.nnz else 0.0)
        defect = h.symmetry_defect()
        if defect > sym_tol * scale:
            raise ValueError(f"H is not symmetric (defect {defect:.3e})")
        self.h = h
        self.j = j
        self.n = h.rows
        self.m = j.rows
        self._sym_tol = sym_tol

    @property
    def dim(self):
        return self.n + self.m

    def apply_pair(self, u, delta, out_top=None, out_bot=None):
        """(H u + J.T delta, J u)."""
        top = self.h.apply(u, out=out_top)
        if self.m:
            top += self.j.apply_transpose(delta)
            bot = self.j.apply(u, out=out_bot)
        else:
            bot = np.zeros(0) if out_bot is None else out_bot
        return top, bot

    def apply(self, z, out=None):
        """Stacked apply on z = (u, delta)."""
        z = np.asarray(z, dtype=np.float64)
        if z.shape != (self.dim,):
            raise ValueError(f"expected stacked vector of length {self.dim}")
        if out is None:
            out = np.empty(self.dim)
        top, bot = self.apply_pair(z[:self.n], z[self.n:])
        out[:self.n] = top
        out[self.n:] = bot
        return out

    def to_dense(self):
        k = np.zeros((self.dim, self.dim))
        k[:self.n, :self.n] = self.h.to_dense()
        if self.m:
            jd = self.j.to_dense()
            k[:self.n, self.n:] = jd.T
            k[self.n:, :self.n] = jd
        return k

    def __repr__(self):
        return f"KktOperator(n={self.n}, m={self.m})"
