"""Factorized Riccati recursion for optimal-control Newton systems, and its low-rank update.

The structured system is the equality-constrained QP

    minimize    sum_j  1/2 z_j^T H_j^J z_j + g_j^T z_j  +  1/2 x_N^T P_N^J x_N + g_N^T x_N
    subject to  x_{j+1} = A_j x_j + B_j u_j + e_j,      x_0 = x_init - x^0

with stage variables ``z_j = (u_j, x_j)``, stage Hessians
``H_j^J = Hl_j + G_j^T diag(sigma_j) G_j`` and ``P_N^J = Q_N + G_N^T diag(sigma_N) G_N``.
``F_j = (B_j A_j)`` is stored as one ``nx x (nu + nx)`` matrix.

:func:`riccati_factor` computes, for each stage, the Cholesky factor of

    H_j = H_j^J + F_j^T L^xx_{j+1} L^xx_{j+1}^T F_j  =  [[Luu, 0], [Lxu, Lxx]] [[Luu, 0], [Lxu, Lxx]]^T.

When the penalties change in a few entries, :func:`riccati_update` carries a
low-rank correction ``P~_j = P_j + Phi_j S_j Phi_j^T`` of the cost-to-go
matrices backwards through the stages and applies it to each stage factor
with the blocked hyperbolic Householder update instead of refactoring.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property, lru_cache

import numpy as np

from . import backend
from .errors import DimensionMismatch, NotPositiveDefinite
from .kernels import DEFAULT_BLOCK_SIZE

__all__ = [
    "OcpDims",
    "OcpData",
    "PenaltySchedule",
    "RiccatiFactors",
    "UpdateCarry",
    "UpdateReport",
    "NewtonStep",
    "assemble_stage_hessian",
    "riccati_factor",
    "riccati_update",
    "riccati_solve",
    "kkt_residual",
    "dense_kkt_solve",
    "factor_residual",
    "rank_budget",
]


def _f64(a, shape, name):
    a = np.asarray(a, dtype=np.float64)
    if a.size == 0 and 0 in shape:
        a = a.reshape(shape)
    if a.shape != shape:
        raise DimensionMismatch(f"{name} has shape {a.shape}, expected {shape}")
    return a


@dataclass(frozen=True)
class OcpDims:
    N: int
    nx: int
    nu: int
    nc: tuple

    def __post_init__(self):
        nc = tuple(int(c) for c in np.broadcast_to(np.asarray(self.nc, dtype=int), (self.N + 1,)))
        object.__setattr__(self, "nc", nc)
        if self.N < 1 or self.nx < 1 or self.nu < 1 or min(nc) < 0:
            raise DimensionMismatch(f"invalid OCP dimensions {self}")

    @property
    def nz(self):
        return self.nu + self.nx

    @cached_property
    def offsets(self):
        """Start of each stage's penalties in the flat ordering, plus the total."""
        return np.concatenate(([0], np.cumsum(self.nc))).astype(np.int64)

    @cached_property
    def budgets(self):
        """:func:`rank_budget` of stages ``0..N-1``."""
        return max(self.nx, self.nu) + np.array(self.nc[:-1], dtype=np.int64)


@dataclass
class OcpData:
    """Stagewise OCP data. Stage vectors and matrices are lists indexed by ``j``.

    ``Hl``, ``F``, ``G`` have ``N`` entries, ``grad`` and ``e`` have ``N + 1``
    and ``N`` entries respectively; ``GN`` and ``QN`` belong to the terminal
    stage, ``grad[N]`` is its gradient (length ``nx``).
    """

    dims: OcpDims
    Hl: list
    QN: np.ndarray
    F: list
    G: list
    GN: np.ndarray
    grad: list
    e: list
    x_init_minus_x0: np.ndarray

    def __post_init__(self):
        d = self.dims
        N, nx, nz = d.N, d.nx, d.nz
        if not (len(self.Hl) == len(self.F) == len(self.G) == len(self.e) == N):
            raise DimensionMismatch("stage lists must have N entries")
        if len(self.grad) != N + 1:
            raise DimensionMismatch("grad must have N + 1 entries")
        self.Hl = [_f64(h, (nz, nz), f"Hl[{j}]") for j, h in enumerate(self.Hl)]
        self.F = [np.asfortranarray(_f64(f, (nx, nz), f"F[{j}]")) for j, f in enumerate(self.F)]
        self.G = [_f64(g, (d.nc[j], nz), f"G[{j}]") for j, g in enumerate(self.G)]
        self.QN = _f64(self.QN, (nx, nx), "QN")
        self.GN = _f64(self.GN, (d.nc[N], nx), "GN")
        self.grad = [_f64(g, (nz,), f"grad[{j}]") for j, g in enumerate(self.grad[:N])] + [
            _f64(self.grad[N], (nx,), f"grad[{N}]")
        ]
        self.e = [_f64(v, (nx,), f"e[{j}]") for j, v in enumerate(self.e)]
        self.x_init_minus_x0 = _f64(self.x_init_minus_x0, (nx,), "x_init_minus_x0")
        for j, h in enumerate(self.Hl):
            if not np.array_equal(h, h.T):
                raise DimensionMismatch(f"Hl[{j}] is not symmetric")
        # column-major operands for the stage kernels; the data is treated as
        # immutable after construction
        self.Hl = [np.asfortranarray(h) for h in self.Hl]
        self.Ft = [np.asfortranarray(f.T) for f in self.F]
        self.Gt = [np.ascontiguousarray(g).T for g in self.G]
        self.GNt = np.ascontiguousarray(self.GN).T

    def constraint_jacobian(self, j):
        return self.GN if j == self.dims.N else self.G[j]


@dataclass(frozen=True)
class PenaltySchedule:
    """Nonnegative ALM penalties, one vector of length ``nc[j]`` per stage ``j = 0..N``."""

    sigma: tuple

    def __post_init__(self):
        s = tuple(np.asarray(v, dtype=np.float64).reshape(-1) for v in self.sigma)
        for j, v in enumerate(s):
            if np.any(v < 0.0) or not np.all(np.isfinite(v)):
                raise ValueError(f"penalties at stage {j} must be finite and nonnegative")
        object.__setattr__(self, "sigma", s)

    def __getitem__(self, j):
        return self.sigma[j]

    def __len__(self):
        return len(self.sigma)

    @cached_property
    def sizes(self):
        return tuple(v.size for v in self.sigma)

    def check(self, dims: OcpDims):
        if self.sizes == dims.nc:
            return
        if len(self.sigma) != dims.N + 1:
            raise DimensionMismatch(f"schedule has {len(self.sigma)} stages, expected {dims.N + 1}")
        for j, v in enumerate(self.sigma):
            if v.size != dims.nc[j]:
                raise DimensionMismatch(f"stage {j}: {v.size} penalties for {dims.nc[j]} constraints")

    def total(self):
        return int(sum(v.size for v in self.sigma))

    @cached_property
    def flat(self):
        """All penalties concatenated in stage order."""
        return np.concatenate(self.sigma) if self.sigma else np.zeros(0)


@dataclass
class RiccatiFactors:
    """Stage factors. ``stage[j]`` is the ``(nu+nx)``-square lower factor of ``H_j``.

    ``Luu``, ``Lxu`` and ``Lxx`` return views into these arrays; strict upper
    triangles are kept at zero.
    """

    nu: int
    nx: int
    stage: list
    LxxN: np.ndarray

    @property
    def N(self):
        return len(self.stage)

    @property
    def Luu(self):
        return [s[: self.nu, : self.nu] for s in self.stage]

    @property
    def Lxu(self):
        return [s[self.nu :, : self.nu] for s in self.stage]

    @property
    def Lxx(self):
        return [s[self.nu :, self.nu :] for s in self.stage] + [self.LxxN]

    def copy(self):
        return RiccatiFactors(self.nu, self.nx, [s.copy(order="F") for s in self.stage],
                              self.LxxN.copy(order="F"))

    def arrays(self):
        return list(self.stage) + [self.LxxN]


@dataclass(frozen=True)
class UpdateCarry:
    """Low-rank correction of the stage cost-to-go: ``P~_j = P_j + Phi diag(S) Phi^T``."""

    Phi: np.ndarray
    S: np.ndarray

    def __post_init__(self):
        if self.Phi.ndim != 2 or self.Phi.shape[1] != self.S.size:
            raise DimensionMismatch(f"Phi {self.Phi.shape} does not match {self.S.size} weights")

    @property
    def k(self):
        return self.S.size


@dataclass
class UpdateReport:
    """What :func:`riccati_update` did, stage by stage.

    ``width[j]`` is the carry width applied at stage ``j``; stages with nothing
    to apply or that were refactored have no entry. ``fallback_stage`` is the
    first stage (counting down) handed to the plain factorization and
    ``reason`` says why.
    """

    width: dict = field(default_factory=dict)
    carries: dict = field(default_factory=dict)
    fallback_stage: int | None = None
    reason: str | None = None


@dataclass(frozen=True)
class NewtonStep:
    du: list
    dx: list


def rank_budget(dims: OcpDims, j: int) -> int:
    """Largest carry width for which stage ``j`` is updated rather than refactored."""
    return max(dims.nx, dims.nu) + dims.nc[j]


@lru_cache(maxsize=32)
def _upper_index(n):
    return np.triu_indices(n, 1)


def _zero_upper(a):
    n = a.shape[0]
    if n > 1:
        a[_upper_index(n)] = 0.0
    return a


def _potrf(H, kern, stage):
    status = kern.potrf(H)
    if status != -1:
        raise NotPositiveDefinite(status, stage=stage, pivot=float(H[status, status]))
    return _zero_upper(H)


def _terminal_hessian(data, sigma):
    GN = data.GN
    P = data.QN + (GN.T * sigma[data.dims.N]) @ GN
    return np.asfortranarray(0.5 * (P + P.T))


def assemble_stage_hessian(data: OcpData, sigma: PenaltySchedule, j: int, Pnext_factor) -> np.ndarray:
    """Dense ``H_j = Hl_j + G_j^T S_j G_j + F_j^T L L^T F_j`` with ``L = Pnext_factor``, symmetrized."""
    d = data.dims
    if not 0 <= j < d.N:
        raise DimensionMismatch(f"stage {j} out of range for N={d.N}")
    Lp = np.tril(_f64(Pnext_factor, (d.nx, d.nx), "Pnext_factor"))
    V = data.F[j].T @ Lp
    G = data.G[j]
    H = data.Hl[j] + (G.T * sigma[j]) @ G + V @ V.T
    return np.asfortranarray(0.5 * (H + H.T))


def factor_residual(data: OcpData, sigma: PenaltySchedule, factors: RiccatiFactors) -> float:
    """Largest relative Frobenius residual of a stage factor against its assembled Hessian."""
    d = data.dims
    P = _terminal_hessian(data, sigma)
    L = factors.LxxN
    worst = float(np.linalg.norm(L @ L.T - P) / np.linalg.norm(P))
    for j in range(d.N):
        H = assemble_stage_hessian(data, sigma, j, factors.Lxx[j + 1])
        L = factors.stage[j]
        worst = max(worst, float(np.linalg.norm(L @ L.T - H) / np.linalg.norm(H)))
    return worst


def _factor_stages(data, sigma, fac, j_top, kern):
    """Plain factorization of stages ``j_top..0``, starting from ``Lxx[j_top + 1]`` in ``fac``."""
    nu, nz = data.dims.nu, data.dims.nz
    if j_top == data.dims.N - 1:
        Lnext, off = fac.LxxN, 0
    else:
        Lnext, off = fac.stage[j_top + 1], nu
    Hs = np.empty((nz, nz, j_top + 1), order="F")
    status, j = kern.factor_chain(Hs, data.Hl, data.Ft, data.Gt, list(sigma.sigma), Lnext, off)
    if status != -1:
        raise NotPositiveDefinite(status, stage=j, pivot=float(Hs[status, status, j]))
    # views of a read-only base are read-only themselves
    Hs.setflags(write=False)
    fac.stage[: j_top + 1] = [Hs[:, :, j] for j in range(j_top + 1)]


def riccati_factor(data: OcpData, sigma: PenaltySchedule, *, kernels=None) -> RiccatiFactors:
    """Stagewise Cholesky factors of the Riccati recursion at penalties ``sigma``.

    The returned arrays are read-only so unchanged stages can be shared
    between factor sets by :func:`riccati_update`.
    """
    kern = kernels or backend.kernels
    d = data.dims
    sigma.check(d)
    LxxN = _potrf(_terminal_hessian(data, sigma), kern, d.N)
    LxxN.setflags(write=False)
    fac = RiccatiFactors(d.nu, d.nx, [None] * d.N, LxxN)
    _factor_stages(data, sigma, fac, d.N - 1, kern)
    return fac


def riccati_update(data: OcpData, sigma_old: PenaltySchedule, sigma_new: PenaltySchedule,
                   factors: RiccatiFactors, *, r=DEFAULT_BLOCK_SIZE, kernels=None,
                   record=False, return_report=False):
    """Factors at ``sigma_new`` obtained by updating ``factors`` (computed at ``sigma_old``).

    Only penalty entries that changed enter the update. When the carry width
    at a stage exceeds :func:`rank_budget`, or an update step loses positive
    definiteness, that stage and all earlier ones are refactored instead.
    ``factors`` is not modified; stages without any change are shared with
    it. With ``return_report`` the result is ``(factors, UpdateReport)``;
    ``record`` also stores every stage carry.
    """
    kern = kernels or backend.kernels
    d = data.dims
    N, nu, nx = d.N, d.nu, d.nx
    nz = nu + nx
    sigma_old.check(d)
    sigma_new.check(d)
    rep = UpdateReport()
    out = RiccatiFactors(nu, nx, list(factors.stage), factors.LxxN)
    offs = d.offsets
    delta = sigma_new.flat - sigma_old.flat
    pos = delta.nonzero()[0]
    delta = delta[pos]
    # changes of stage j are pos[cut[j]:cut[j + 1]]; the carry width at
    # stage j counts all changes at stages j..N
    cut = pos.searchsorted(offs)
    width = pos.size - cut[:-1]

    def finish():
        return (out, rep) if return_report else out

    def fallback(j, reason):
        rep.fallback_stage = j
        rep.reason = reason
        if j == N:
            out.LxxN = _potrf(_terminal_hessian(data, sigma_new), kern, N)
            out.LxxN.setflags(write=False)
            j -= 1
        if j >= 0:
            _factor_stages(data, sigma_new, out, j, kern)
        return finish()

    j_top = int(np.count_nonzero(width[:N])) - 1
    if j_top < 0 and width[N] == 0:
        return finish()
    over = (width[:N] > d.budgets).nonzero()[0]
    j_lo = int(over[-1]) + 1 if over.size else 0
    kmax = int(width[min(j_lo, j_top + 1)])
    U = np.empty((nz, kmax), order="F")
    S = np.empty(kmax)

    # terminal stage: Phi_N = G_N^T restricted to the changed rows
    kN = int(width[N])
    if kN:
        rep.width[N] = kN
        PhiN = np.empty((nx, kN), order="F") if record else None
        L = np.empty((nx, nx), order="F")
        status = kern.update_terminal(L, factors.LxxN, data.GNt, pos[cut[N] :], delta[cut[N] :],
                                      int(offs[N]), data.Ft[N - 1], U, S, r, PhiN)
        if record:
            rep.carries[N] = UpdateCarry(PhiN, S[:kN].copy())
        if status != -1:
            return fallback(N, "indefinite")
        L.setflags(write=False)
        out.LxxN = L
    if j_top < j_lo:
        return fallback(j_top, "budget")

    Phi = None
    if record:
        Phi = [None] * N
        for j in range(j_lo, j_top + 1):
            Phi[j] = np.empty((nx, int(width[j])), order="F")
    Lnew = np.empty((nz, nz, j_top + 1 - j_lo), order="F")
    status, failed = kern.update_chain(Lnew, nu, j_top, factors.stage, data.Gt, data.Ft,
                                       pos, delta, offs, cut, U, S, kN, r, Phi)
    j_done = j_lo if status == -1 else failed + 1
    Lnew.setflags(write=False)
    out.stage[j_done : j_top + 1] = [Lnew[:, :, j - j_lo] for j in range(j_done, j_top + 1)]
    if return_report:
        wl = width.tolist()
        for j in range(j_done if status == -1 else failed, j_top + 1):
            rep.width[j] = wl[j]
            if record and j >= j_done:
                rep.carries[j] = UpdateCarry(Phi[j], S[: wl[j]].copy())
    if status != -1:
        return fallback(failed, "indefinite")
    if j_lo > 0:
        return fallback(j_lo - 1, "budget")
    return finish()


def _solve_lower(L, b):
    # forward substitution with the lower triangle of L
    n = L.shape[0]
    x = np.array(b, dtype=np.float64)
    for i in range(n):
        x[i] = (x[i] - L[i, :i] @ x[:i]) / L[i, i]
    return x


def _solve_lower_t(L, b):
    # back substitution with L^T
    n = L.shape[0]
    x = np.array(b, dtype=np.float64)
    for i in range(n - 1, -1, -1):
        x[i] = (x[i] - L[i + 1 :, i] @ x[i + 1 :]) / L[i, i]
    return x


def riccati_solve(factors: RiccatiFactors, data: OcpData) -> NewtonStep:
    """Newton step ``(du, dx)`` from the factors: backward pass for the affine terms, forward rollout."""
    d = data.dims
    N, nu = d.N, d.nu
    if factors.N != N or factors.nu != nu or factors.nx != d.nx:
        raise DimensionMismatch("factors do not match the data dimensions")
    ell = [None] * N
    p = data.grad[N].copy()
    Lxx = factors.LxxN
    for j in range(N - 1, -1, -1):
        Pe = Lxx @ (Lxx.T @ data.e[j])
        q = data.grad[j] + data.F[j].T @ (Pe + p)
        Lj = factors.stage[j]
        ell[j] = _solve_lower(Lj[:nu, :nu], q[:nu])
        p = q[nu:] - Lj[nu:, :nu] @ ell[j]
        Lxx = Lj[nu:, nu:]
    dx = [data.x_init_minus_x0.copy()]
    du = []
    for j in range(N):
        Lj = factors.stage[j]
        u = -_solve_lower_t(Lj[:nu, :nu], Lj[nu:, :nu].T @ dx[j] + ell[j])
        du.append(u)
        dx.append(data.F[j] @ np.concatenate((u, dx[j])) + data.e[j])
    return NewtonStep(du, dx)


def _check_step(data, step):
    d = data.dims
    if len(step.du) != d.N or len(step.dx) != d.N + 1:
        raise DimensionMismatch("step has the wrong number of stages")
    for u in step.du:
        if np.shape(u) != (d.nu,):
            raise DimensionMismatch("input step has the wrong length")
    for x in step.dx:
        if np.shape(x) != (d.nx,):
            raise DimensionMismatch("state step has the wrong length")


def kkt_residual(data: OcpData, sigma: PenaltySchedule, step: NewtonStep) -> float:
    """Relative KKT residual of ``step`` for the QP defined by ``data`` and ``sigma``.

    The dynamics multipliers are eliminated by the adjoint recursion
    ``lam_N = P_N^J x_N + g_N``, ``lam_j = (H_j^J z_j + g_j)_x + A_j^T lam_{j+1}``;
    what remains is input stationarity, dynamics and initial-state
    feasibility. Each block is measured in the max norm relative to
    ``1 + `` the size of its terms; the largest block value is returned.
    """
    d = data.dims
    sigma.check(d)
    _check_step(data, step)
    N, nu = d.N, d.nu
    worst = 0.0

    def rel(res, *terms):
        scale = max((float(np.abs(t).max(initial=0.0)) for t in terms), default=0.0)
        return float(np.abs(res).max(initial=0.0)) / (1.0 + scale)

    worst = max(worst, rel(step.dx[0] - data.x_init_minus_x0, step.dx[0], data.x_init_minus_x0))
    for j in range(N):
        z = np.concatenate((step.du[j], step.dx[j]))
        Fz = data.F[j] @ z
        worst = max(worst, rel(step.dx[j + 1] - Fz - data.e[j], step.dx[j + 1], Fz, data.e[j]))
    PN = _terminal_hessian(data, sigma)
    lam = PN @ step.dx[N] + data.grad[N]
    for j in range(N - 1, -1, -1):
        z = np.concatenate((step.du[j], step.dx[j]))
        G = data.G[j]
        Hz = data.Hl[j] @ z + G.T @ (sigma[j] * (G @ z))
        Fl = data.F[j].T @ lam
        grad = Hz + data.grad[j] + Fl
        worst = max(worst, rel(grad[:nu], Hz[:nu], data.grad[j][:nu], Fl[:nu]))
        lam = grad[nu:]
    return worst


def dense_kkt_solve(data: OcpData, sigma: PenaltySchedule) -> NewtonStep:
    """Reference Newton step from the assembled dense KKT system (LU solve)."""
    d = data.dims
    sigma.check(d)
    N, nx, nu, nz = d.N, d.nx, d.nu, d.nz
    nv = N * nz + nx
    neq = (N + 1) * nx
    K = np.zeros((nv + neq, nv + neq))
    rhs = np.zeros(nv + neq)
    for j in range(N):
        s = slice(j * nz, (j + 1) * nz)
        G = data.G[j]
        K[s, s] = data.Hl[j] + (G.T * sigma[j]) @ G
        rhs[s] = -data.grad[j]
    sN = slice(N * nz, nv)
    K[sN, sN] = _terminal_hessian(data, sigma)
    rhs[sN] = -data.grad[N]
    # equality rows: x_0 = x_init - x^0, x_{j+1} - F_j z_j = e_j
    C = np.zeros((neq, nv))
    C[:nx, nu:nz] = np.eye(nx)
    b = np.zeros(neq)
    b[:nx] = data.x_init_minus_x0
    for j in range(N):
        rows = slice((j + 1) * nx, (j + 2) * nx)
        C[rows, j * nz : (j + 1) * nz] = -data.F[j]
        nxt = (j + 1) * nz + nu if j + 1 < N else N * nz
        C[rows, nxt : nxt + nx] = np.eye(nx)
        b[rows] = data.e[j]
    K[:nv, nv:] = C.T
    K[nv:, :nv] = C
    rhs[nv:] = b
    sol = np.linalg.solve(K, rhs)
    du = [sol[j * nz : j * nz + nu].copy() for j in range(N)]
    dx = [sol[j * nz + nu : (j + 1) * nz].copy() for j in range(N)] + [sol[N * nz : nv].copy()]
    return NewtonStep(du, dx)
