"""Table-driven GF(2^8) arithmetic and small-matrix linear algebra.

Reduction polynomial x^8 + x^4 + x^3 + x + 1 (0x11B), exp/log tables over
the generator 0x03 (0x02 does not generate the full multiplicative group
for this polynomial).  Addition is XOR; multiplication goes through the
tables; the matrix routines do Gaussian elimination with exact byte
arithmetic.

Elements are numpy uint8 scalars or arrays throughout.  The elimination
and product kernels are compiled with numba when available; the fallback
path works on whole rows with table gathers instead (see ``_accel``).
"""

from __future__ import annotations

import numpy as np

from ._accel import USING_NUMBA, njit
from .errors import ValidationError

POLY = 0x11B
GENERATOR = 0x03


def _build_tables():
    exp = np.zeros(510, dtype=np.uint8)
    log = np.zeros(256, dtype=np.int64)
    x = 1
    for i in range(255):
        exp[i] = x
        log[x] = i
        double = x << 1
        if double & 0x100:
            double ^= POLY
        x = (double ^ x) & 0xFF  # multiply by the generator 0x03
    exp[255:] = exp[:255]
    return exp, log


EXP, LOG = _build_tables()


def add(a, b):
    """Field addition (and subtraction): bytewise XOR."""
    return np.bitwise_xor(a, b)


def multiply(a, b):
    """Elementwise field product with numpy broadcasting."""
    a = np.asarray(a, dtype=np.uint8)
    b = np.asarray(b, dtype=np.uint8)
    prod = EXP[LOG[a] + LOG[b]]
    return np.where((a == 0) | (b == 0), np.uint8(0), prod)


def inverse(a):
    """Multiplicative inverse; rejects zero."""
    a = np.asarray(a, dtype=np.uint8)
    if np.any(a == 0):
        raise ValidationError("zero has no multiplicative inverse")
    return EXP[255 - LOG[a]]


@njit(cache=True)
def _matmul_kernel(A, B, exp, log, out):
    m, k = A.shape
    n = B.shape[1]
    for i in range(m):
        for j in range(n):
            acc = 0
            for t in range(k):
                a = A[i, t]
                b = B[t, j]
                if a != 0 and b != 0:
                    acc ^= exp[log[a] + log[b]]
            out[i, j] = acc


def _matmul_rows(A, B):
    out = np.zeros((A.shape[0], B.shape[1]), dtype=np.uint8)
    for t in range(A.shape[1]):
        col = A[:, t]
        row = B[t, :]
        prod = EXP[LOG[col][:, None] + LOG[row][None, :]]
        np.bitwise_xor(
            out,
            np.where((col[:, None] == 0) | (row[None, :] == 0), np.uint8(0), prod),
            out=out,
        )
    return out


def matmul(A, B) -> np.ndarray:
    """Field matrix product."""
    A = np.ascontiguousarray(A, dtype=np.uint8)
    B = np.ascontiguousarray(B, dtype=np.uint8)
    if A.ndim != 2 or B.ndim != 2 or A.shape[1] != B.shape[0]:
        raise ValidationError(f"shape mismatch for matmul: {A.shape} x {B.shape}")
    if not USING_NUMBA:
        return _matmul_rows(A, B)
    out = np.empty((A.shape[0], B.shape[1]), dtype=np.uint8)
    _matmul_kernel(A, B, EXP, LOG, out)
    return out


@njit(cache=True)
def _rref_kernel(R, exp, log, piv):
    m, n = R.shape
    rank = 0
    for col in range(n):
        if rank == m:
            break
        sel = -1
        for r in range(rank, m):
            if R[r, col] != 0:
                sel = r
                break
        if sel < 0:
            continue
        if sel != rank:
            for j in range(n):
                tmp = R[rank, j]
                R[rank, j] = R[sel, j]
                R[sel, j] = tmp
        p = R[rank, col]
        if p != 1:
            linv = 255 - log[p]
            for j in range(col, n):
                v = R[rank, j]
                if v != 0:
                    R[rank, j] = exp[log[v] + linv]
        for r in range(m):
            f = R[r, col]
            if r != rank and f != 0:
                lf = log[f]
                for j in range(col, n):
                    v = R[rank, j]
                    if v != 0:
                        R[r, j] ^= exp[log[v] + lf]
        piv[rank] = col
        rank += 1
    return rank


def _rref_rows(R, piv):
    m, n = R.shape
    rank = 0
    for col in range(n):
        if rank == m:
            break
        hits = np.nonzero(R[rank:, col])[0]
        if hits.size == 0:
            continue
        sel = rank + int(hits[0])
        if sel != rank:
            R[[rank, sel]] = R[[sel, rank]]
        p = int(R[rank, col])
        if p != 1:
            R[rank] = multiply(R[rank], EXP[255 - LOG[p]])
        others = R[:, col] != 0
        others[rank] = False
        if np.any(others):
            factors = R[others, col]
            R[others] = np.bitwise_xor(
                R[others], multiply(factors[:, None], R[rank][None, :])
            )
        piv[rank] = col
        rank += 1
    return rank


def row_reduce(M) -> tuple:
    """Reduced row echelon form; returns (R, pivot_columns, rank)."""
    R = np.array(M, dtype=np.uint8, copy=True, order="C")
    if R.ndim != 2:
        raise ValidationError("row_reduce expects a matrix")
    piv = np.zeros(min(R.shape), dtype=np.int64)
    if USING_NUMBA:
        rank = int(_rref_kernel(R, EXP, LOG, piv))
    else:
        rank = _rref_rows(R, piv)
    return R, piv[:rank], rank


def matrix_rank(M) -> int:
    M = np.asarray(M, dtype=np.uint8)
    if M.size == 0:
        return 0
    return row_reduce(M)[2]


def solve(A, B) -> np.ndarray:
    """Solve A @ X = B for a matrix A with full column rank.

    A is (m, k) with rank k <= m; B is (m, L).  Returns the unique X of
    shape (k, L).  Raises when the columns are dependent or the system is
    inconsistent (neither occurs for matrices built from actual products).
    """
    A = np.asarray(A, dtype=np.uint8)
    B = np.asarray(B, dtype=np.uint8)
    if A.ndim != 2 or B.ndim != 2 or A.shape[0] != B.shape[0]:
        raise ValidationError(f"shape mismatch for solve: {A.shape}, {B.shape}")
    m, k = A.shape
    R, piv, rank = row_reduce(np.hstack([A, B]))
    if rank < k or np.any(piv[:k] != np.arange(k)):
        raise ValidationError("coefficient matrix does not have full column rank")
    if rank > k:
        raise ValidationError("inconsistent linear system")
    return R[:k, k:].copy()
