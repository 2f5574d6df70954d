"""Hyperbolic Householder reflectors and blocked Cholesky factorization updates.

Given a lower-triangular factor ``L`` with positive diagonal, an update
matrix ``A`` (n x m) and real weights ``sigma`` (any sign), the routines
here compute the factor of ``L L^T + A diag(sigma) A^T`` by triangularizing
``(L | A)`` with a ``diag(I, sigma)``-orthogonal transformation. Products of
reflectors are kept in compact WY form ``(B, T)``::

    Q = [[T^-1 - I,          -T^-1 B          ],
         [sigma B^T T^-1,  I - sigma B^T T^-1 B]]

The numeric work is delegated to :mod:`hyhup.backend` (compiled or numpy).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import backend
from .errors import DegeneratePivot, DimensionMismatch, IndefiniteUpdate, SingularTriangular
from .matcore import as_fortran, solve_right_upper

__all__ = [
    "CompactWY",
    "ReflectorScalars",
    "make_reflector",
    "hyh_update_block",
    "hyh_apply_block",
    "hyh_update",
    "hyh_update_inplace",
    "reconstruct_q",
    "DEFAULT_BLOCK_SIZE",
]

DEFAULT_BLOCK_SIZE = 4


@dataclass(frozen=True)
class ReflectorScalars:
    """Scalars defining one normalized reflector.

    ``lambda_new`` is the updated diagonal entry, ``tau_inv`` the reflector
    coefficient and ``b`` the normalized reflection vector (its implicit
    leading entry is one).
    """

    lambda_new: float
    tau_inv: float
    b: np.ndarray
    beta: float


@dataclass(frozen=True)
class CompactWY:
    """Product of ``k`` reflectors: ``B`` is k x m, ``T`` upper triangular k x k.

    ``T`` stores tau on its diagonal; ``tau_inv`` caches the reciprocals the
    kernels use when applying ``T^-1``.
    """

    B: np.ndarray
    T: np.ndarray
    tau_inv: np.ndarray

    def __post_init__(self):
        k = self.T.shape[0]
        if self.T.shape != (k, k) or self.B.shape[0] != k or self.tau_inv.shape != (k,):
            raise DimensionMismatch(
                f"inconsistent compact WY shapes B{self.B.shape} T{self.T.shape}"
            )

    @property
    def k(self) -> int:
        return self.T.shape[0]

    @property
    def m(self) -> int:
        return self.B.shape[1]


def _sigma(sigma, m=None) -> np.ndarray:
    s = np.ascontiguousarray(np.asarray(sigma, dtype=np.float64).reshape(-1))
    if m is not None and s.size != m:
        raise DimensionMismatch(f"sigma has {s.size} entries, update matrix has {m} columns")
    return s


def _update_matrix(A, n) -> np.ndarray:
    A = np.asarray(A, dtype=np.float64)
    if A.ndim == 1:
        A = A.reshape(n, -1) if A.size else np.zeros((n, 0))
    if A.shape[0] != n:
        raise DimensionMismatch(f"update matrix has {A.shape[0]} rows, factor has {n}")
    return A


def _check_factor(L) -> int:
    if L.ndim != 2 or L.shape[0] != L.shape[1]:
        raise DimensionMismatch(f"factor must be square, got {L.shape}")
    return L.shape[0]


def _raise_status(status, offset=0):
    if status >= 0:
        raise IndefiniteUpdate(status + offset)
    raise DegeneratePivot(-status - 2 + offset)


def make_reflector(lam, a, sigma) -> ReflectorScalars:
    """Reflector that folds the row ``a`` into the pivot ``lam``.

    The new pivot keeps the sign of ``lam`` (``sign(0) = 1``).
    """
    a = np.asarray(a, dtype=np.float64).reshape(-1)
    sigma = _sigma(sigma, a.size)
    lam = float(lam)
    alpha2 = float(np.dot(sigma * a, a))
    s = lam * lam + alpha2
    if not s > 0.0:
        raise IndefiniteUpdate(0)
    lt = np.sqrt(s)
    if lam < 0.0:
        lt = -lt
    beta = lam + lt
    if beta == 0.0:
        raise DegeneratePivot(0)
    tau_inv = 2.0 * beta * beta / (alpha2 + beta * beta)
    return ReflectorScalars(lambda_new=float(lt), tau_inv=float(tau_inv), b=a / beta, beta=float(beta))


def hyh_update_block(L11, A1, sigma, *, kernels=None):
    """Unblocked update of a square factor block, in place.

    ``L11`` is overwritten by the updated factor and ``A1`` by the reflector
    rows ``B`` when both are already float64 column-major; otherwise the work
    happens on converted copies. Returns ``(L11~, CompactWY)``.
    """
    kern = kernels or backend.kernels
    L11 = as_fortran(L11)
    n = _check_factor(L11)
    A1 = as_fortran(_update_matrix(A1, n))
    sigma = _sigma(sigma, A1.shape[1])
    T = np.zeros((n, n), order="F")
    tau_inv = np.zeros(n)
    status = kern.update_block(L11, A1, sigma, T, tau_inv)
    if status != -1:
        _raise_status(status)
    return L11, CompactWY(B=A1, T=T, tau_inv=tau_inv)


def hyh_apply_block(L21, A2, sigma, W: CompactWY, *, kernels=None):
    """Apply ``W`` to ``(L21 | A2)`` in place: returns ``(L21~, A2~)``."""
    kern = kernels or backend.kernels
    L21 = as_fortran(L21)
    A2 = as_fortran(A2)
    if L21.ndim != 2:
        raise DimensionMismatch("L21 must be two-dimensional")
    l = L21.shape[0]
    if L21.shape[1] != W.k:
        raise DimensionMismatch(f"L21 has {L21.shape[1]} columns, W has {W.k} reflectors")
    if A2.shape != (l, W.m):
        if A2.size == 0 and l == 0:
            A2 = np.zeros((0, W.m), order="F")
        else:
            raise DimensionMismatch(f"A2 has shape {A2.shape}, expected ({l}, {W.m})")
    sigma = _sigma(sigma, W.m)
    diag = np.diag(W.T)
    zero = np.flatnonzero(diag == 0.0)
    if zero.size:
        raise SingularTriangular(int(zero[0]))
    kern.apply_block(L21, A2, sigma, as_fortran(W.B), as_fortran(W.T), np.ascontiguousarray(W.tau_inv))
    return L21, A2


def hyh_update_inplace(L, A, sigma, r=DEFAULT_BLOCK_SIZE, *, start=0, stop=None, kernels=None):
    """Blocked update of columns ``start:stop`` of ``L``, overwriting ``L`` and ``A``.

    ``L`` and ``A`` must already be float64 column-major. Raises
    :class:`IndefiniteUpdate` with the global column index on failure.
    """
    kern = kernels or backend.kernels
    n = _check_factor(L)
    if r < 1:
        raise ValueError("block size must be at least 1")
    if A.shape[0] != n:
        raise DimensionMismatch(f"update matrix has {A.shape[0]} rows, factor has {n}")
    if not (L.flags.f_contiguous and A.flags.f_contiguous) or L.dtype != np.float64 or A.dtype != np.float64:
        raise TypeError("in-place update needs float64 column-major arrays")
    stop = n if stop is None else stop
    status = kern.update_cols(L, A, _sigma(sigma, A.shape[1]), int(r), int(start), int(stop))
    if status != -1:
        _raise_status(status)
    return L


def hyh_update(L, A, sigma, r=DEFAULT_BLOCK_SIZE, *, kernels=None) -> np.ndarray:
    """Return the Cholesky factor of ``L L^T + A diag(sigma) A^T``.

    The inputs are not modified. ``r`` is the block size; the last block is
    ragged when ``r`` does not divide ``n``.
    """
    L = as_fortran(L, copy=True)
    n = _check_factor(L)
    A = as_fortran(_update_matrix(A, n), copy=True)
    hyh_update_inplace(L, A, sigma, r, kernels=kernels)
    return L


def reconstruct_q(W: CompactWY, sigma, n=None) -> np.ndarray:
    """Dense ``(n + m) x (n + m)`` matrix represented by ``W``.

    With ``n > k`` the reflectors act on the leading ``k`` indices and the
    remaining ``n - k`` indices pass through as identity.
    """
    k, m = W.k, W.m
    n = k if n is None else n
    if n < k:
        raise DimensionMismatch(f"n={n} is smaller than the reflector count {k}")
    sigma = _sigma(sigma, m)
    Tinv = solve_right_upper(np.eye(k), W.T) if k else np.zeros((0, 0))
    Tinv_B = Tinv @ W.B
    SBt = sigma[:, None] * W.B.T
    Q = np.eye(n + m)
    Q[:k, :k] = Tinv - np.eye(k)
    Q[:k, n:] = -Tinv_B
    Q[n:, :k] = SBt @ Tinv
    Q[n:, n:] = np.eye(m) - SBt @ Tinv_B
    return Q
