"""Banded Cholesky factorization, solves and selected inversion.

Matrices use lower band storage: ``ab[r, j] = A[j + r, j]``. Kernels are
compiled with numba and release the GIL so candidate fits can run on
threads.
"""

import numpy as np
from numba import njit


@njit(cache=True, nogil=True)
def band_cholesky(ab):
    """Cholesky factor ``L`` of a banded SPD matrix, same storage as ``ab``.

    Returns ``(L, status, pivot)``: ``status`` is -1 on success, else the
    index of the first non-positive pivot. ``pivot`` is the smallest pivot
    seen (the failing one on failure).
    """
    p = ab.shape[0] - 1
    m = ab.shape[1]
    lb = np.zeros_like(ab)
    min_pivot = np.inf
    for j in range(m):
        s = ab[0, j]
        for k in range(max(0, j - p), j):
            s -= lb[j - k, k] * lb[j - k, k]
        if s < min_pivot:
            min_pivot = s
        if not s > 0.0:
            return lb, j, s
        ljj = np.sqrt(s)
        lb[0, j] = ljj
        for i in range(j + 1, min(m, j + p + 1)):
            s = ab[i - j, j]
            for k in range(max(0, i - p), j):
                s -= lb[i - k, k] * lb[j - k, k]
            lb[i - j, j] = s / ljj
    return lb, -1, min_pivot


@njit(cache=True, nogil=True)
def band_cho_solve(lb, rhs):
    """Solve ``L L^T x = rhs`` column by column."""
    p = lb.shape[0] - 1
    m = lb.shape[1]
    x = rhs.copy()
    for c in range(x.shape[1]):
        for j in range(m):
            s = x[j, c]
            for k in range(max(0, j - p), j):
                s -= lb[j - k, k] * x[k, c]
            x[j, c] = s / lb[0, j]
        for j in range(m - 1, -1, -1):
            s = x[j, c]
            for i in range(j + 1, min(m, j + p + 1)):
                s -= lb[i - j, j] * x[i, c]
            x[j, c] = s / lb[0, j]
    return x


@njit(cache=True, nogil=True)
def band_selected_inverse(lb):
    """Entries of ``A^{-1}`` inside the band, from the Cholesky factor of ``A``.

    Backward recursion over ``L^T Z = L^{-1}``; only band entries of ``Z``
    are ever touched, so the cost is linear in the matrix size.
    """
    p = lb.shape[0] - 1
    m = lb.shape[1]
    zb = np.zeros_like(lb)
    for j in range(m - 1, -1, -1):
        ljj = lb[0, j]
        last = min(m - 1, j + p)
        for i in range(last, j, -1):
            s = 0.0
            for k in range(j + 1, last + 1):
                if k >= i:
                    s += lb[k - j, j] * zb[k - i, i]
                else:
                    s += lb[k - j, j] * zb[i - k, k]
            zb[i - j, j] = -s / ljj
        s = 0.0
        for k in range(j + 1, last + 1):
            s += lb[k - j, j] * zb[k - j, j]
        zb[0, j] = (1.0 / ljj - s) / ljj
    return zb
