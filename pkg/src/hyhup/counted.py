"""Scalar reference path for the blocked update with operation tallies.

This mirrors the blocked driver one arithmetic operation at a time so the
number of fused multiply-adds, multiplications, additions, divisions and
square roots can be compared with the closed-form cost of the algorithm.
It is slow and only meant for instrumentation and cross-checks; the result
agrees with :func:`hyhup.kernels.hyh_update` to roundoff.

Counting conventions (weights restricted to +1/-1):

* ``x + s*a*b`` with ``s = +-1`` is one fma; multiplying by a sign is free.
* ``lam**2 + alpha**2`` closing the pivot norm is one fma.
* the two divisions per column are ``1/beta`` and ``2 beta^2 / d``;
  the stored ``tau = d/(2 beta^2)`` is formed as ``0.5 * d * (1/beta)^2``
  with multiplications only.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, asdict

import numpy as np

from .errors import DegeneratePivot, DimensionMismatch, IndefiniteUpdate
from .matcore import as_fortran

__all__ = ["FlopCounter", "hyh_update_counted", "closed_form_fma"]


@dataclass
class FlopCounter:
    fma: int = 0
    mul: int = 0
    add: int = 0
    div: int = 0
    sqrt: int = 0

    def reset(self):
        self.fma = self.mul = self.add = self.div = self.sqrt = 0

    def as_dict(self):
        return asdict(self)


def closed_form_fma(n, m, r):
    """Fused multiply-add count of the blocked update for unit weights."""
    return m * n * n + (r - 1) / 4 * n * n + (r - 1) / 2 * m * n - (r * r - 3 * r + 2) / 4 * n


def _signs(sigma, m):
    s = np.asarray(sigma, dtype=np.float64).reshape(-1)
    if s.size != m:
        raise DimensionMismatch(f"sigma has {s.size} entries, update matrix has {m} columns")
    if not np.all(np.abs(s) == 1.0):
        raise ValueError("the counted path needs weights in {+1, -1}")
    return [s_j > 0 for s_j in s]


class _Tally:
    # local integer tallies; flushed into the FlopCounter at the end
    __slots__ = ("fma", "mul", "add", "div", "sqrt")

    def __init__(self):
        self.fma = self.mul = self.add = self.div = self.sqrt = 0

    def fma_s(self, acc, a, b, plus):
        self.fma += 1
        return acc + a * b if plus else acc - a * b

    def flush(self, counter):
        counter.fma += self.fma
        counter.mul += self.mul
        counter.add += self.add
        counter.div += self.div
        counter.sqrt += self.sqrt


def _block(L, A, pos, c, kb, m, t):
    """Column-by-column update of the diagonal block starting at ``c``.

    Overwrites rows ``c:c+kb`` of ``A`` by B and returns ``(T, tau_inv)``.
    """
    T = [[0.0] * kb for _ in range(kb)]
    tau_inv = [0.0] * kb
    for i in range(kb):
        k = c + i
        lam = L[k][k]
        a = A[k]
        alpha2 = 0.0
        for j in range(m):
            alpha2 = t.fma_s(alpha2, a[j], a[j], pos[j])
        s = t.fma_s(alpha2, lam, lam, True)
        if not s > 0.0:
            raise IndefiniteUpdate(k)
        t.sqrt += 1
        lt = math.sqrt(s)
        if lam < 0.0:
            lt = -lt
        t.add += 1
        beta = lam + lt
        if beta == 0.0:
            raise DegeneratePivot(k)
        t.div += 1
        inv_beta = 1.0 / beta
        t.mul += 1
        beta2 = beta * beta
        t.add += 1
        d = alpha2 + beta2
        t.mul += 1
        t.div += 1
        ti = 2.0 * beta2 / d
        t.mul += 2
        tau = 0.5 * d * inv_beta
        t.mul += 1
        tau *= inv_beta
        b = [0.0] * m
        for j in range(m):
            t.mul += 1
            b[j] = a[j] * inv_beta
        A[k] = b
        for p in range(k + 1, c + kb):
            row = A[p]
            acc = L[p][k]
            for j in range(m):
                acc = t.fma_s(acc, row[j], b[j], pos[j])
            t.mul += 1
            w = ti * acc
            t.add += 1
            L[p][k] = w - L[p][k]
            for j in range(m):
                row[j] = t.fma_s(row[j], w, b[j], False)
        L[k][k] = lt
        for p in range(i):
            brow = A[c + p]
            acc = 0.0
            for j in range(m):
                acc = t.fma_s(acc, brow[j], b[j], pos[j])
            T[p][i] = acc
        T[i][i] = tau
        tau_inv[i] = ti
    return T, tau_inv


def _apply(L, A, pos, c, kb, n, m, T, tau_inv, t):
    """Transform rows below the block: W = (L21 + A2 S B^T) T^-1, A2 -= W B, L21 = W - L21."""
    B = A[c : c + kb]
    for q in range(c + kb, n):
        row = A[q]
        lrow = L[q]
        x = [0.0] * kb
        for p in range(kb):
            acc = lrow[c + p]
            brow = B[p]
            for j in range(m):
                acc = t.fma_s(acc, row[j], brow[j], pos[j])
            x[p] = acc
        for p in range(kb):
            acc = x[p]
            for s in range(p):
                acc = t.fma_s(acc, x[s], T[s][p], False)
            t.mul += 1
            x[p] = acc * tau_inv[p]
        for p in range(kb):
            brow = B[p]
            for j in range(m):
                row[j] = t.fma_s(row[j], x[p], brow[j], False)
        for p in range(kb):
            t.add += 1
            lrow[c + p] = x[p] - lrow[c + p]


def hyh_update_counted(L, A, sigma, r, counter: FlopCounter | None = None) -> np.ndarray:
    """Blocked update of ``L`` by ``A diag(sigma) A^T`` on a scalar path, tallying operations.

    ``sigma`` must contain only +1 and -1. Returns the new factor (lower
    triangle, upper zeroed); the operation tallies are added to ``counter``.
    """
    L = as_fortran(L)
    if L.ndim != 2 or L.shape[0] != L.shape[1]:
        raise DimensionMismatch(f"factor must be square, got {L.shape}")
    n = L.shape[0]
    A = as_fortran(A)
    if A.size == 0:
        A = A.reshape(n, 0)
    if A.shape[0] != n:
        raise DimensionMismatch(f"update matrix has {A.shape[0]} rows, factor has {n}")
    m = A.shape[1]
    if r < 1:
        raise ValueError("block size must be at least 1")
    pos = _signs(sigma, m)
    Lw = np.tril(L).tolist()
    Aw = A.tolist()
    t = _Tally()
    try:
        if m:
            for c in range(0, n, r):
                kb = min(r, n - c)
                T, tau_inv = _block(Lw, Aw, pos, c, kb, m, t)
                _apply(Lw, Aw, pos, c, kb, n, m, T, tau_inv, t)
    finally:
        if counter is not None:
            t.flush(counter)
    return np.tril(np.array(Lw, dtype=np.float64, order="F"))
