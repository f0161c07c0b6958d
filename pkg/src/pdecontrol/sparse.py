"""Sparse and block linear-algebra kernels.

All matrices are stored as canonical ``scipy.sparse.csr_matrix`` objects
(sorted column indices, no duplicates).  Block-banded operators hold a few
distinct ``n_x``-by-``n_x`` blocks together with band offsets and scales, so
an all-at-once operator over ``n_t`` time steps never stores ``n_t`` copies.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp

__all__ = [
    "DimensionError",
    "csr_from_coo",
    "check_csr",
    "spmv",
    "BlockBandedOperator",
    "block_apply",
    "block_tri_solve",
    "materialize",
    "to_sparse",
    "sym_gen_eig",
    "write_matrix_market",
    "DENSE_LIMIT",
]

DENSE_LIMIT = 5000


class DimensionError(ValueError):
    """Operand sizes do not match the operator."""


def csr_from_coo(rows, cols, vals, shape) -> sp.csr_matrix:
    """Build a canonical CSR matrix, summing duplicates in input order.

    scipy's own duplicate summation sorts with an unstable sort, so the order
    in which coincident contributions are added is not fixed.  Here entries
    are stably sorted by (row, col) and summed left to right, which keeps
    symmetric assemblies bitwise symmetric.
    """
    rows = np.asarray(rows, dtype=np.int64).ravel()
    cols = np.asarray(cols, dtype=np.int64).ravel()
    vals = np.asarray(vals, dtype=np.float64).ravel()
    n_rows, n_cols = shape
    if rows.size == 0:
        return sp.csr_matrix(shape, dtype=np.float64)
    order = np.lexsort((cols, rows))
    rows, cols, vals = rows[order], cols[order], vals[order]
    key = rows * n_cols + cols
    starts = np.flatnonzero(np.r_[True, key[1:] != key[:-1]])
    summed = np.empty(starts.size)
    ends = np.r_[starts[1:], key.size]
    # duplicate runs are short (<= 4 per node pair for Q1); a plain loop
    # over the maximal run length keeps the summation order sequential
    summed[:] = vals[starts]
    run = ends - starts
    for k in range(1, int(run.max())):
        m = run > k
        summed[m] += vals[starts[m] + k]
    urows, ucols = rows[starts], cols[starts]
    indptr = np.zeros(n_rows + 1, dtype=np.int64)
    np.add.at(indptr, urows + 1, 1)
    np.cumsum(indptr, out=indptr)
    A = sp.csr_matrix((summed, ucols, indptr), shape=shape)
    A.has_sorted_indices = True
    return A


def check_csr(A: sp.csr_matrix) -> None:
    """Raise ``ValueError`` unless ``A`` satisfies the CSR invariants."""
    ptr, idx = A.indptr, A.indices
    if ptr.size != A.shape[0] + 1 or ptr[0] != 0 or np.any(np.diff(ptr) < 0):
        raise ValueError("row offsets must be non-decreasing, length n_rows+1")
    if idx.size and (idx.min() < 0 or idx.max() >= A.shape[1]):
        raise ValueError("column index out of range")
    for i in range(A.shape[0]):
        row = idx[ptr[i]:ptr[i + 1]]
        if np.any(np.diff(row) <= 0):
            raise ValueError(f"row {i}: columns not strictly increasing")


def spmv(A: sp.csr_matrix, x: np.ndarray) -> np.ndarray:
    """``y = A x``; each row is summed left to right over its stored columns."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1 or x.shape[0] != A.shape[1]:
        raise DimensionError(f"spmv: len(x)={x.shape} but A has {A.shape[1]} columns")
    return A @ x


@dataclass(frozen=True)
class BlockBandedOperator:
    """Block-banded operator on vectors of ``n_t`` stacked blocks of size ``n_x``.

    ``bands`` holds ``(offset, block, scale)``: block row ``i`` receives
    ``scale * block @ x[i + offset]`` wherever ``i + offset`` is in range.
    ``corrections`` holds ``(row, col, block, scale)`` for position-dependent
    extras, e.g. a different final diagonal block.
    """

    n_t: int
    n_x: int
    bands: tuple = ()
    corrections: tuple = ()
    name: str = field(default="", compare=False)

    def __post_init__(self):
        object.__setattr__(self, "bands", tuple(tuple(b) for b in self.bands))
        object.__setattr__(self, "corrections", tuple(tuple(c) for c in self.corrections))
        for off, blk, _ in self.bands:
            if blk.shape != (self.n_x, self.n_x):
                raise DimensionError(f"band {off}: block shape {blk.shape}")
        for r, c, blk, _ in self.corrections:
            if not (0 <= r < self.n_t and 0 <= c < self.n_t):
                raise DimensionError(f"correction ({r}, {c}) outside {self.n_t} blocks")
            if blk.shape != (self.n_x, self.n_x):
                raise DimensionError(f"correction ({r}, {c}): block shape {blk.shape}")

    @property
    def shape(self):
        n = self.n_t * self.n_x
        return (n, n)

    def __matmul__(self, x):
        return block_apply(self, x)

    @property
    def T(self) -> "BlockBandedOperator":
        return BlockBandedOperator(
            self.n_t, self.n_x,
            tuple((-off, blk.T.tocsr(), s) for off, blk, s in self.bands),
            tuple((c, r, blk.T.tocsr(), s) for r, c, blk, s in self.corrections),
            name=f"{self.name}^T" if self.name else "",
        )

    def diagonal_block(self, i: int) -> sp.csr_matrix:
        """Sparse diagonal block ``i`` (sum of offset-0 bands and corrections)."""
        out = sp.csr_matrix((self.n_x, self.n_x))
        for off, blk, s in self.bands:
            if off == 0:
                out = out + s * blk
        for r, c, blk, s in self.corrections:
            if r == i and c == i:
                out = out + s * blk
        return out.tocsr()


def _check_len(op: BlockBandedOperator, x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1 or x.shape[0] != op.n_t * op.n_x:
        raise DimensionError(
            f"vector of length {x.shape} for operator with {op.n_t}x{op.n_x} blocks")
    return x


def block_apply(op: BlockBandedOperator, x: np.ndarray) -> np.ndarray:
    x = _check_len(op, x)
    nt, nx = op.n_t, op.n_x
    X = x.reshape(nt, nx)
    Y = np.zeros((nt, nx))
    for off, blk, s in op.bands:
        lo, hi = max(0, -off), min(nt, nt - off)
        if lo >= hi or s == 0.0:
            continue
        Y[lo:hi] += s * (blk @ X[lo + off:hi + off].T).T
    for r, c, blk, s in op.corrections:
        Y[r] += s * (blk @ X[c])
    return Y.ravel()


def block_tri_solve(op: BlockBandedOperator, b: np.ndarray,
                    block_solver: Callable[[int, np.ndarray], np.ndarray],
                    direction: str = "lower") -> np.ndarray:
    """Block forward (``lower``) or backward (``upper``) substitution.

    ``block_solver(i, rhs)`` must (approximately) apply the inverse of the
    ``i``-th diagonal block.  With exact block solves the result satisfies
    ``op @ x == b``.
    """
    b = _check_len(op, b)
    nt, nx = op.n_t, op.n_x
    if direction not in ("lower", "upper"):
        raise ValueError(f"direction must be 'lower' or 'upper', got {direction!r}")
    lower = direction == "lower"
    for off, _, s in op.bands:
        if s != 0.0 and (off > 0 if lower else off < 0):
            raise ValueError(f"band offset {off} breaks {direction}-triangular layout")
    for r, c, _, s in op.corrections:
        if s != 0.0 and (c > r if lower else c < r):
            raise ValueError(f"correction ({r}, {c}) breaks {direction}-triangular layout")
    off_bands = [(off, blk, s) for off, blk, s in op.bands if off != 0 and s != 0.0]
    off_corr = [(r, c, blk, s) for r, c, blk, s in op.corrections if r != c]

    B = b.reshape(nt, nx)
    X = np.zeros((nt, nx))
    order = range(nt) if lower else range(nt - 1, -1, -1)
    for i in order:
        rhs = B[i].copy()
        for off, blk, s in off_bands:
            j = i + off
            if 0 <= j < nt:
                rhs -= s * (blk @ X[j])
        for r, c, blk, s in off_corr:
            if r == i:
                rhs -= s * (blk @ X[c])
        X[i] = block_solver(i, rhs)
    return X.ravel()


def materialize(op, limit: int = DENSE_LIMIT) -> np.ndarray:
    """Dense copy of a block operator (or any sparse matrix) for verification."""
    if sp.issparse(op):
        if max(op.shape) > limit:
            raise MemoryError(f"dense materialization of {op.shape} exceeds {limit}")
        return op.toarray()
    n = op.n_t * op.n_x
    if n > limit:
        raise MemoryError(f"dense materialization of size {n} exceeds {limit}")
    nt, nx = op.n_t, op.n_x
    D = np.zeros((n, n))
    for off, blk, s in op.bands:
        dense = s * blk.toarray()
        for i in range(max(0, -off), min(nt, nt - off)):
            j = i + off
            D[i * nx:(i + 1) * nx, j * nx:(j + 1) * nx] += dense
    for r, c, blk, s in op.corrections:
        D[r * nx:(r + 1) * nx, c * nx:(c + 1) * nx] += s * blk.toarray()
    return D


def sym_gen_eig(S: np.ndarray, T: np.ndarray, *, vectors: bool = False):
    """Eigenvalues of the symmetric-definite pencil ``S x = lam T x``, ascending.

    Uses congruence reduction: ``T = R^T R`` (Cholesky), then the symmetric
    eigenproblem of ``R^{-T} S R^{-1}``.  Raises ``numpy.linalg.LinAlgError``
    if ``T`` is not positive definite.
    """
    S = np.asarray(S, dtype=np.float64)
    T = np.asarray(T, dtype=np.float64)
    if S.shape != T.shape or S.shape[0] != S.shape[1]:
        raise DimensionError(f"pencil shapes {S.shape} and {T.shape}")
    scale = max(np.abs(S).max(), np.finfo(float).tiny)
    if np.abs(S - S.T).max() > 1e-12 * scale:
        raise ValueError("S is not symmetric")
    R = sla.cholesky(T, lower=False)  # raises LinAlgError if not SPD
    X = sla.solve_triangular(R, S, trans="T", lower=False)
    X = sla.solve_triangular(R, X.T, trans="T", lower=False).T
    X = 0.5 * (X + X.T)
    if not vectors:
        return sla.eigh(X, eigvals_only=True)
    lam, Q = sla.eigh(X)
    return lam, sla.solve_triangular(R, Q, lower=False)


def write_matrix_market(path, A: sp.spmatrix) -> None:
    """Dump ``A`` in MatrixMarket coordinate real general format (1-based)."""
    C = sp.coo_matrix(A)
    with open(path, "w") as fh:
        fh.write("%%MatrixMarket matrix coordinate real general\n")
        fh.write(f"{C.shape[0]} {C.shape[1]} {C.nnz}\n")
        for i, j, v in zip(C.row, C.col, C.data):
            fh.write(f"{i + 1} {j + 1} {float(v)!r}\n")


def to_sparse(op: BlockBandedOperator) -> sp.csr_matrix:
    """Assemble a block operator as one sparse matrix (direct-solve oracle)."""
    nt = op.n_t
    out = sp.csr_matrix(op.shape)
    for off, blk, s in op.bands:
        if abs(off) >= nt:
            continue
        shift = sp.eye(nt, k=off, format="csr")
        out = out + s * sp.kron(shift, blk, format="csr")
    for r, c, blk, s in op.corrections:
        pos = sp.csr_matrix(([1.0], ([r], [c])), shape=(nt, nt))
        out = out + s * sp.kron(pos, blk, format="csr")
    return out.tocsr()
