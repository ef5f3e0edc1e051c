"""Recover per-class probability vectors from pairwise class probabilities.

Given the matrix R of pairwise probabilities (r[i, j] estimates the chance
of class i given "i or j", with r[j, i] = 1 - r[i, j]) the class vector p
minimizes

    1/2 * sum_i sum_{j != i} (r[j, i] * p_i - r[i, j] * p_j)^2

subject to p >= 0, sum(p) = 1.  The minimizer solves a (c+1) x (c+1)
linear system whose matrix block Q has Q[i, i] = sum_{s != i} r[s, i]^2 and
Q[i, j] = -r[j, i] * r[i, j], bordered by the all-ones vector for the
equality constraint.
"""

from __future__ import annotations

import numpy as np

from .core import DataError

PIVOT_EPS = 1e-12
RIDGE = 1e-10


def _assemble(R: np.ndarray) -> np.ndarray:
    """Bordered coupling systems for a stack of pairwise matrices (N, c, c)."""
    n, c = R.shape[0], R.shape[1]
    Q = -(R.transpose(0, 2, 1) * R)
    diag = (R**2).sum(axis=1) - np.diagonal(R, axis1=1, axis2=2) ** 2
    idx = np.arange(c)
    Q[:, idx, idx] = diag
    A = np.zeros((n, c + 1, c + 1))
    A[:, :c, :c] = Q
    A[:, :c, c] = 1.0
    A[:, c, :c] = 1.0
    return A


def _solve_batched(A: np.ndarray, b: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Gaussian elimination with partial pivoting on a stack of systems.

    Returns (solutions, singular mask).  Singular systems keep running on
    garbage values and are discarded by the caller; every arithmetic step is
    elementwise per system, so results do not depend on the batch size.
    """
    A = A.copy()
    b = b.copy()
    n, m = A.shape[0], A.shape[1]
    singular = np.zeros(n, dtype=bool)
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        for k in range(m):
            piv = np.abs(A[:, k:, k]).argmax(axis=1) + k
            rows = np.arange(n)
            swap_k, swap_p = A[rows, k].copy(), A[rows, piv].copy()
            A[rows, k], A[rows, piv] = swap_p, swap_k
            bk, bp = b[rows, k].copy(), b[rows, piv].copy()
            b[rows, k], b[rows, piv] = bp, bk
            pivot = A[:, k, k]
            singular |= np.abs(pivot) < PIVOT_EPS
            if k + 1 < m:
                factors = A[:, k + 1 :, k] / pivot[:, None]
                A[:, k + 1 :, k:] -= factors[:, :, None] * A[:, None, k, k:]
                b[:, k + 1 :] -= factors * b[:, k, None]
        x = np.zeros_like(b)
        for k in range(m - 1, -1, -1):
            acc = b[:, k] - np.einsum("nj,nj->n", A[:, k, k + 1 :], x[:, k + 1 :])
            x[:, k] = acc / A[:, k, k]
    return x, singular


def couple_batch(R: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Solve the coupling system for a stack of (c, c) pairwise matrices.

    Returns (P, warnings): P has shape (N, c) with each row clamped to the
    simplex; warnings flags rows where the system stayed singular after the
    ridge retry and a uniform vector was substituted.
    """
    R = np.asarray(R, dtype=np.float64)
    if R.ndim == 2:
        R = R[None]
    n, c = R.shape[0], R.shape[1]
    if c < 2:
        raise DataError("coupling needs at least 2 classes")
    rhs = np.zeros((n, c + 1))
    rhs[:, c] = 1.0
    A = _assemble(R)
    x, singular = _solve_batched(A, rhs)
    if singular.any():
        ridged = A[singular]
        idx = np.arange(c)
        ridged[:, idx, idx] += RIDGE
        x2, still = _solve_batched(ridged, rhs[singular])
        x[singular] = x2
        bad = np.zeros(n, dtype=bool)
        bad[np.nonzero(singular)[0][still]] = True
    else:
        bad = np.zeros(n, dtype=bool)
    p = x[:, :c]
    p = np.maximum(p, 0.0)
    sums = p.sum(axis=1)
    degenerate = ~np.isfinite(sums) | (sums <= 0)
    bad |= degenerate
    p[bad] = 1.0 / c
    sums = p.sum(axis=1)
    p /= sums[:, None]
    return p, bad


def couple(R: np.ndarray) -> tuple[np.ndarray, bool]:
    """Probability vector for one (c, c) pairwise matrix; see couple_batch."""
    R = np.asarray(R, dtype=np.float64)
    if R.ndim != 2 or R.shape[0] != R.shape[1]:
        raise DataError(f"pairwise matrix must be square, got {R.shape}")
    c = R.shape[0]
    off = ~np.eye(c, dtype=bool)
    if np.any(R[off] <= 0) or np.any(R[off] >= 1):
        raise DataError("pairwise probabilities must lie strictly inside (0, 1)")
    p, bad = couple_batch(R[None])
    return p[0], bool(bad[0])
