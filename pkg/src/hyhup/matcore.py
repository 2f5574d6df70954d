"""Dense storage conventions and reference (oracle) routines.

Matrices are plain :class:`numpy.ndarray` objects in column-major
(Fortran) order. A triangular factor occupies a full square array; only
its lower triangle is meaningful and kernels never read the strict upper
triangle. The routines here are deliberately simple and independent of the
fast kernels so they can referee them in tests.
"""

from __future__ import annotations

import numpy as np

from .errors import DimensionMismatch, NotPositiveDefinite, SingularTriangular

__all__ = [
    "as_fortran",
    "lower",
    "reference_cholesky",
    "sym_low_rank_form",
    "solve_right_upper",
    "residual_fro",
    "max_rel_diff",
]


def as_fortran(a, copy=False) -> np.ndarray:
    """Return ``a`` as a column-major float64 array, optionally copying."""
    a = np.asarray(a, dtype=np.float64)
    if a.ndim == 1:
        a = a.reshape(-1, 1)
    if copy:
        return np.array(a, dtype=np.float64, order="F", copy=True)
    return np.asfortranarray(a)


def lower(L) -> np.ndarray:
    """Lower triangle of ``L`` with the dead upper triangle zeroed."""
    return np.tril(np.asarray(L, dtype=np.float64))


def _check_square(H, name="H"):
    H = np.asarray(H, dtype=np.float64)
    if H.ndim != 2 or H.shape[0] != H.shape[1]:
        raise DimensionMismatch(f"{name} must be square, got shape {H.shape}")
    return H


def reference_cholesky(H) -> np.ndarray:
    """Right-looking textbook Cholesky factorization ``H = L L^T``.

    Pivots must be strictly positive; there is no epsilon floor. Raises
    :class:`NotPositiveDefinite` with the failing pivot index otherwise.
    """
    H = _check_square(H)
    n = H.shape[0]
    scale = max(np.abs(H).max(initial=0.0), np.finfo(float).tiny)
    if not np.allclose(H, H.T, rtol=0.0, atol=1e-12 * scale):
        raise DimensionMismatch("H is not symmetric")
    S = np.array(H, dtype=np.float64, order="F", copy=True)
    L = np.zeros((n, n), order="F")
    for k in range(n):
        pivot = S[k, k]
        if not pivot > 0.0:
            raise NotPositiveDefinite(k, pivot=float(pivot))
        d = np.sqrt(pivot)
        L[k, k] = d
        col = S[k + 1 :, k] / d
        L[k + 1 :, k] = col
        S[k + 1 :, k + 1 :] -= np.outer(col, col)
    return L


def sym_low_rank_form(L, A, sigma) -> np.ndarray:
    """Dense ``L L^T + A diag(sigma) A^T``, exactly symmetric."""
    L = lower(_check_square(L, "L"))
    n = L.shape[0]
    A = np.asarray(A, dtype=np.float64)
    sigma = np.asarray(sigma, dtype=np.float64).reshape(-1)
    if A.size == 0 and sigma.size == 0:
        A = A.reshape(n, 0)
    if A.ndim == 1:
        A = A.reshape(-1, 1)
    if A.shape[0] != n or A.shape[1] != sigma.size:
        raise DimensionMismatch(
            f"A has shape {A.shape}, expected ({n}, {sigma.size})"
        )
    H = L @ L.T + (A * sigma) @ A.T
    return np.asfortranarray(0.5 * (H + H.T))


def solve_right_upper(X, T) -> np.ndarray:
    """Solve ``W T = X`` for ``W`` with ``T`` upper triangular (back substitution)."""
    T = _check_square(T, "T")
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X.reshape(1, -1)
    k = T.shape[0]
    if X.shape[1] != k:
        raise DimensionMismatch(f"X has {X.shape[1]} columns, T is {k}x{k}")
    W = np.array(X, dtype=np.float64, order="F", copy=True)
    for j in range(k):
        d = T[j, j]
        if d == 0.0:
            raise SingularTriangular(j)
        if j:
            W[:, j] -= W[:, :j] @ T[:j, j]
        W[:, j] /= d
    return W


def residual_fro(Lhat, Htarget) -> float:
    """Relative Frobenius residual ``||Lhat Lhat^T - H||_F / ||H||_F``."""
    Lhat = lower(_check_square(Lhat, "Lhat"))
    Htarget = _check_square(Htarget, "Htarget")
    if Lhat.shape != Htarget.shape:
        raise DimensionMismatch(f"{Lhat.shape} vs {Htarget.shape}")
    return float(np.linalg.norm(Lhat @ Lhat.T - Htarget) / np.linalg.norm(Htarget))


def max_rel_diff(X, Y) -> float:
    """Elementwise difference scaled by the largest entry of the reference ``Y``."""
    X = np.asarray(X, dtype=np.float64)
    Y = np.asarray(Y, dtype=np.float64)
    if X.shape != Y.shape:
        raise DimensionMismatch(f"{X.shape} vs {Y.shape}")
    if X.size == 0:
        return 0.0
    scale = np.abs(Y).max()
    diff = np.abs(X - Y).max()
    if scale == 0.0:
        return float(diff)
    return float(diff / scale)
