"""Seeded problem generators for the kernels, the Riccati recursion and the benchmarks.

Randomness comes from numpy's Philox4x64-10 counter-based bit generator,
keyed by the 64-bit seed. Each generator draws from its own stream, selected
by the most significant counter word, so the instances do not depend on the
order in which generators are called:

    stream 0  SPD factors          stream 2  OCP instances
    stream 1  update matrices      stream 3  active-set perturbations
    stream 4  case shapes drawn by the verification suites

The second most significant word counts retry attempts.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .errors import GenerationFailed, NotPositiveDefinite
from .matcore import reference_cholesky, sym_low_rank_form
from .riccati import OcpData, OcpDims, PenaltySchedule, riccati_factor

__all__ = [
    "GenConfig",
    "rng",
    "gen_spd_factor",
    "gen_update",
    "gen_ocp",
    "perturb_active_set",
    "flip_count",
    "save_update_case",
    "save_ocp_case",
    "load_case",
]

STREAM_SPD, STREAM_UPDATE, STREAM_OCP, STREAM_PERTURB, STREAM_SHAPE = range(5)
MAX_RESCALE = 40
MAX_ATTEMPTS = 8


@dataclass(frozen=True)
class GenConfig:
    seed: int = 0
    n: int = 16
    m: int = 4
    dims: OcpDims | None = None
    cond_target: float = 1e3
    gamma: float = 10.0
    flip_fraction: float = 0.25

    def __post_init__(self):
        if not 0 <= self.seed < 2**64:
            raise ValueError("seed must be a 64-bit unsigned integer")
        if not 0.0 <= self.flip_fraction <= 1.0:
            raise ValueError("flip_fraction must lie in [0, 1]")
        if not self.cond_target >= 1.0:
            raise ValueError("cond_target must be at least 1")
        if not self.gamma > 0.0:
            raise ValueError("gamma must be positive")

    def with_(self, **kw):
        return replace(self, **kw)


def rng(seed: int, stream: int, attempt: int = 0) -> np.random.Generator:
    """Generator for ``(seed, stream, attempt)``; see the module docstring."""
    return np.random.Generator(np.random.Philox(key=seed, counter=[0, 0, attempt, stream]))


def _orthogonal(g, n):
    Q, R = np.linalg.qr(g.standard_normal((n, n)))
    return Q * np.sign(np.diag(R))


def gen_spd_factor(cfg: GenConfig) -> np.ndarray:
    """Lower factor of ``Q diag(d) Q^T`` with ``d`` log-spaced in ``[1, cond_target]``."""
    n = cfg.n
    if n < 1:
        raise ValueError("n must be at least 1")
    g = rng(cfg.seed, STREAM_SPD)
    Q = _orthogonal(g, n)
    d = np.logspace(0.0, math.log10(cfg.cond_target), n) if n > 1 else np.ones(1)
    H = (Q * d) @ Q.T
    return reference_cholesky(0.5 * (H + H.T))


def gen_update(cfg: GenConfig, L, signs):
    """Update matrix ``A`` and weights for the sign pattern ``signs``.

    ``signs`` holds the weights themselves (typically +1/-1). ``A = L Z``;
    the columns of ``Z`` with negative weight are scaled to a spectral norm
    below one so the downdate keeps ``L L^T + A S A^T`` positive definite.
    The result is checked with :func:`reference_cholesky` and negative
    columns are halved until it passes.
    """
    sigma = np.asarray(signs, dtype=np.float64).reshape(-1)
    L = np.tril(np.asarray(L, dtype=np.float64))
    n, m = L.shape[0], sigma.size
    if m == 0:
        return np.zeros((n, 0), order="F"), sigma
    g = rng(cfg.seed, STREAM_UPDATE)
    Z = g.standard_normal((n, m)) / math.sqrt(n)
    scale_neg = g.uniform(0.5, 0.9)
    neg = sigma < 0.0
    if neg.any():
        Zn = Z[:, neg] * np.sqrt(np.abs(sigma[neg]))
        Z[:, neg] *= scale_neg / np.linalg.norm(Zn, 2)
    pos = sigma > 0.0
    if pos.any():
        Z[:, pos] /= np.sqrt(sigma[pos])
    A = np.asfortranarray(L @ Z)
    for _ in range(MAX_RESCALE):
        try:
            reference_cholesky(sym_low_rank_form(L, A, sigma))
            return A, sigma
        except NotPositiveDefinite:
            A[:, neg] *= 0.5
    raise GenerationFailed(f"no positive definite downdate after {MAX_RESCALE} halvings")


def _scaled_dynamics(g, nx):
    A = g.standard_normal((nx, nx))
    rho = np.abs(np.linalg.eigvals(A)).max()
    target = g.uniform(0.8, 1.2)
    return A * (target / rho) if rho > 0 else A


def _draw_ocp(cfg, g):
    d = cfg.dims
    N, nx, nu, nz = d.N, d.nx, d.nu, d.nz
    Hl, F, G, grad, e = [], [], [], [], []
    sig = []
    for j in range(N):
        M = g.standard_normal((nz, nz)) / math.sqrt(nz)
        H = M @ M.T + 0.1 * np.eye(nz)
        Hl.append(0.5 * (H + H.T))
        B = g.standard_normal((nx, nu)) / math.sqrt(nu)
        F.append(np.hstack((B, _scaled_dynamics(g, nx))))
        G.append(g.standard_normal((d.nc[j], nz)) / math.sqrt(nz))
        grad.append(g.standard_normal(nz))
        e.append(0.1 * g.standard_normal(nx))
    M = g.standard_normal((nx, nx)) / math.sqrt(nx)
    QN = M @ M.T + 0.1 * np.eye(nx)
    GN = g.standard_normal((d.nc[N], nx)) / math.sqrt(nx)
    grad.append(g.standard_normal(nx))
    x0 = g.standard_normal(nx)
    for j in range(N + 1):
        active = g.random(d.nc[j]) < 0.5
        sig.append(np.where(active, cfg.gamma, 0.0))
    data = OcpData(d, Hl, 0.5 * (QN + QN.T), F, G, GN, grad, e, x0)
    return data, PenaltySchedule(tuple(sig))


def gen_ocp(cfg: GenConfig):
    """Random OCP instance and penalty schedule for ``cfg.dims``.

    Accepted only when :func:`riccati_factor` succeeds on it; otherwise the
    next attempt stream is tried.
    """
    if cfg.dims is None:
        raise ValueError("gen_ocp needs cfg.dims")
    for attempt in range(MAX_ATTEMPTS):
        data, sigma = _draw_ocp(cfg, rng(cfg.seed, STREAM_OCP, attempt))
        try:
            riccati_factor(data, sigma)
        except NotPositiveDefinite:
            continue
        return data, sigma
    raise GenerationFailed(f"no factorizable OCP after {MAX_ATTEMPTS} attempts")


def flip_count(fraction: float, total: int) -> int:
    """``ceil(fraction * total)``, ignoring floating-point excess below 1e-9."""
    return min(total, math.ceil(fraction * total - 1e-9))


def perturb_active_set(sigma: PenaltySchedule, cfg: GenConfig, count: int | None = None) -> PenaltySchedule:
    """Toggle a uniformly random subset of penalties between 0 and ``cfg.gamma``.

    The subset size is ``ceil(flip_fraction * total)`` unless ``count`` is given.
    """
    sizes = [v.size for v in sigma.sigma]
    total = sum(sizes)
    k = flip_count(cfg.flip_fraction, total) if count is None else count
    if not 0 <= k <= total:
        raise ValueError(f"cannot flip {k} of {total} penalties")
    flat = np.concatenate(sigma.sigma) if total else np.zeros(0)
    pick = rng(cfg.seed, STREAM_PERTURB).choice(total, size=k, replace=False)
    flat = flat.copy()
    flat[pick] = np.where(flat[pick] == 0.0, cfg.gamma, 0.0)
    return PenaltySchedule(tuple(np.split(flat, np.cumsum(sizes)[:-1])))


# serialization: numpy .npz archives, one array per entry, shapes and order kept

def save_update_case(path, L, A, sigma, seed=0):
    np.savez(path, kind="update", L=np.asfortranarray(L), A=np.asfortranarray(A),
             sigma=np.asarray(sigma, dtype=np.float64), seed=np.uint64(seed))


def save_ocp_case(path, data: OcpData, sigma: PenaltySchedule, seed=0):
    d = data.dims
    arrays = {
        "kind": "ocp",
        "seed": np.uint64(seed),
        "dims": np.array([d.N, d.nx, d.nu]),
        "nc": np.array(d.nc),
        "QN": data.QN,
        "GN": data.GN,
        "x_init_minus_x0": data.x_init_minus_x0,
        "grad_N": data.grad[d.N],
    }
    for j in range(d.N):
        arrays[f"Hl_{j}"] = data.Hl[j]
        arrays[f"F_{j}"] = data.F[j]
        arrays[f"G_{j}"] = data.G[j]
        arrays[f"grad_{j}"] = data.grad[j]
        arrays[f"e_{j}"] = data.e[j]
    for j in range(d.N + 1):
        arrays[f"sigma_{j}"] = sigma[j]
    np.savez(path, **arrays)


def load_case(path):
    """Read a case written by :func:`save_update_case` or :func:`save_ocp_case`.

    Returns ``("update", (L, A, sigma), seed)`` or ``("ocp", (data, sigma), seed)``.
    """
    with np.load(path, allow_pickle=False) as z:
        kind = str(z["kind"])
        seed = int(z["seed"])
        if kind == "update":
            return kind, (np.asfortranarray(z["L"]), np.asfortranarray(z["A"]), z["sigma"].copy()), seed
        if kind != "ocp":
            raise ValueError(f"unknown case kind {kind!r}")
        N, nx, nu = (int(v) for v in z["dims"])
        dims = OcpDims(N, nx, nu, tuple(int(c) for c in z["nc"]))
        data = OcpData(
            dims,
            [z[f"Hl_{j}"] for j in range(N)],
            z["QN"],
            [z[f"F_{j}"] for j in range(N)],
            [z[f"G_{j}"] for j in range(N)],
            z["GN"],
            [z[f"grad_{j}"] for j in range(N)] + [z["grad_N"]],
            [z[f"e_{j}"] for j in range(N)],
            z["x_init_minus_x0"],
        )
        sigma = PenaltySchedule(tuple(z[f"sigma_{j}"] for j in range(N + 1)))
        return kind, (data, sigma), seed
