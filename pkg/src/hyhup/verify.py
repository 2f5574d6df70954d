"""Seeded invariant suites for the update kernels and the Riccati recursion.

Each case is a pure function of its seed. A case evaluates a list of named
checks; each check yields a nonnegative measure compared against its
tolerance (``value <= tol`` passes). Exceptions inside a check count as a
failure of that check with value ``inf``.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import backend
from .kernels import hyh_update, hyh_update_block, reconstruct_q
from .matcore import max_rel_diff, reference_cholesky, residual_fro, sym_low_rank_form
from .probgen import GenConfig, STREAM_SHAPE, gen_ocp, gen_spd_factor, gen_update, perturb_active_set, rng
from .riccati import (
    OcpDims,
    assemble_stage_hessian,
    dense_kkt_solve,
    kkt_residual,
    rank_budget,
    riccati_factor,
    riccati_solve,
    riccati_update,
)

__all__ = ["Check", "CaseResult", "SuiteSummary", "kernel_case", "riccati_case", "run_suite", "TOLERANCES"]

BLOCK_SIZES = (1, 2, 4, 8)
FLIP_MODES = ("single", "quarter", "all")

TOLERANCES = {
    "case_setup": 0.0,
    "reconstruction": 1e-10,
    "oracle_equivalence": 1e-9,
    "positive_diagonal": 0.0,
    "block_size_independence": 1e-10,
    "s_orthogonality": 1e-11,
    "annihilation": 1e-11,
    "composition": 1e-8,
    "backend_agreement": 1e-10,
    "stage_oracle": 1e-10,
    "update_equivalence": 1e-8,
    "carry_identity": 1e-9,
    "rank_accounting": 0.0,
    "noop_bitwise": 0.0,
    "kkt_residual": 1e-9,
    "dense_kkt": 1e-8,
}


@dataclass(frozen=True)
class Check:
    name: str
    value: float
    tol: float
    detail: str = ""

    @property
    def ok(self) -> bool:
        return self.value <= self.tol


@dataclass
class CaseResult:
    suite: str
    seed: int
    shape: str
    checks: list = field(default_factory=list)

    @property
    def ok(self):
        return all(c.ok for c in self.checks)


class _Recorder:
    def __init__(self, result):
        self.result = result

    def __call__(self, name, fn):
        tol = TOLERANCES[name]
        try:
            value = float(fn())
            detail = ""
        except Exception as exc:  # a crashing check is a failing check
            value, detail = math.inf, f"{type(exc).__name__}: {exc}"
        if math.isnan(value):
            value = math.inf
        self.result.checks.append(Check(name, value, tol, detail))


def _kernel_shape(seed):
    g = rng(seed, STREAM_SHAPE)
    n = int(g.integers(1, 129))
    m = int(g.integers(0, 33))
    r = int(g.choice(BLOCK_SIZES))
    signs = np.where(g.random(m) < 0.5, -1.0, 1.0) * g.uniform(0.5, 2.0, m)
    return n, m, r, signs


def kernel_case(seed: int, *, kernels=None) -> CaseResult:
    """Checks of the blocked update on one random instance (n <= 128, m <= 32)."""
    n, m, r, signs = _kernel_shape(seed)
    res = CaseResult("kernels", seed, f"n={n} m={m} r={r}")
    check = _Recorder(res)
    cfg = GenConfig(seed=seed, n=n, m=m)
    L = gen_spd_factor(cfg)
    A, sigma = gen_update(cfg, L, signs)
    Ht = sym_low_rank_form(L, A, sigma)
    Lt = hyh_update(L, A, sigma, r, kernels=kernels)
    check("reconstruction", lambda: residual_fro(Lt, Ht))
    check("oracle_equivalence", lambda: max_rel_diff(np.tril(Lt), reference_cholesky(Ht)))
    check("positive_diagonal", lambda: int(np.sum(np.diag(Lt) <= 0.0)))

    def block_sizes():
        outs = [np.tril(hyh_update(L, A, sigma, rr, kernels=kernels)) for rr in BLOCK_SIZES]
        return max(max_rel_diff(o, outs[0]) for o in outs[1:])

    check("block_size_independence", block_sizes)

    k = min(n, 32)
    L11, A1 = np.array(L[:k, :k], order="F"), np.array(A[:k], order="F")
    LA = np.hstack((L11, A1))
    Lt11, W = hyh_update_block(L11.copy(order="F"), A1.copy(order="F"), sigma, kernels=kernels)
    Q = reconstruct_q(W, sigma)
    Sh = np.diag(np.concatenate((np.ones(k), sigma)))
    check("s_orthogonality", lambda: np.linalg.norm(Q @ Sh @ Q.T - Sh) / (1.0 + np.linalg.norm(Sh)))
    target = np.hstack((np.tril(Lt11), np.zeros((k, m))))
    check("annihilation", lambda: np.linalg.norm(LA @ Q - target) / np.linalg.norm(LA))

    def composition():
        back = hyh_update(Lt, A, -sigma, r, kernels=kernels)
        return max_rel_diff(np.tril(back), np.tril(L))

    check("composition", composition)

    if "compiled" in backend.available():
        def agreement():
            a = hyh_update(L, A, sigma, r, kernels=backend.load("compiled"))
            b = hyh_update(L, A, sigma, r, kernels=backend.load("python"))
            return max_rel_diff(np.tril(a), np.tril(b))

        check("backend_agreement", agreement)
    return res


def _riccati_shape(seed):
    g = rng(seed, STREAM_SHAPE)
    N = int(g.integers(1, 17))
    nx = int(g.integers(1, 9))
    nu = int(g.integers(1, 5))
    nc = tuple(int(c) for c in g.integers(0, 13, N + 1))
    mode = FLIP_MODES[seed % len(FLIP_MODES)]
    return OcpDims(N, nx, nu, nc), mode


def _carry_identity(old, new, rep):
    worst = 0.0
    for j, carry in rep.carries.items():
        P_old = old.Lxx[j] @ old.Lxx[j].T
        P_new = new.Lxx[j] @ new.Lxx[j].T
        expect = (carry.Phi * carry.S) @ carry.Phi.T
        scale = max(np.abs(P_new).max(), np.abs(P_old).max())
        worst = max(worst, np.abs(P_new - P_old - expect).max() / scale)
    return worst


def _rank_accounting(dims, sigma_old, sigma_new, rep):
    # carry width must equal the changes at stages j..N and respect the budget
    changes = [int(np.count_nonzero(a != b)) for a, b in zip(sigma_old.sigma, sigma_new.sigma)]
    bad = 0
    for j, k in rep.width.items():
        if k != sum(changes[j:]):
            bad += 1
        if j < dims.N and k > rank_budget(dims, j) and rep.reason != "indefinite":
            bad += 1
    return bad


def riccati_case(seed: int, *, kernels=None) -> CaseResult:
    """Checks of factorization, update and solve on one random OCP (N <= 16, nx <= 8, nu <= 4, nc <= 12)."""
    dims, mode = _riccati_shape(seed)
    res = CaseResult("riccati", seed, f"N={dims.N} nx={dims.nx} nu={dims.nu} flips={mode}")
    check = _Recorder(res)
    frac = {"single": 0.0, "quarter": 0.25, "all": 1.0}[mode]
    cfg = GenConfig(seed=seed, dims=dims, flip_fraction=frac)
    data, sigma = gen_ocp(cfg)
    fac = riccati_factor(data, sigma, kernels=kernels)

    def stage_oracle():
        worst = max_rel_diff(fac.LxxN, reference_cholesky(data.QN + (data.GN.T * sigma[dims.N]) @ data.GN))
        for j in range(dims.N):
            H = assemble_stage_hessian(data, sigma, j, fac.Lxx[j + 1])
            worst = max(worst, max_rel_diff(fac.stage[j], reference_cholesky(H)))
        return worst

    check("stage_oracle", stage_oracle)
    count = min(1, sigma.total()) if mode == "single" else None
    sigma_new = perturb_active_set(sigma, cfg, count=count)
    upd, rep = riccati_update(data, sigma, sigma_new, fac, kernels=kernels, record=True, return_report=True)
    fresh = riccati_factor(data, sigma_new, kernels=kernels)
    check("update_equivalence", lambda: max(max_rel_diff(a, b) for a, b in zip(upd.arrays(), fresh.arrays())))
    check("carry_identity", lambda: _carry_identity(fac, upd, rep))
    check("rank_accounting", lambda: _rank_accounting(dims, sigma, sigma_new, rep))

    def noop():
        same = riccati_update(data, sigma, sigma, fac, kernels=kernels)
        return sum(not np.array_equal(a, b) for a, b in zip(same.arrays(), fac.arrays()))

    check("noop_bitwise", noop)
    step = riccati_solve(fresh, data)
    check("kkt_residual", lambda: kkt_residual(data, sigma_new, step))
    if dims.N <= 8:
        def dense():
            ref = dense_kkt_solve(data, sigma_new)
            return max(max_rel_diff(a, b) for a, b in zip(step.du + step.dx, ref.du + ref.dx))

        check("dense_kkt", dense)
    return res


SUITES = {"kernels": kernel_case, "riccati": riccati_case}


@dataclass
class SuiteSummary:
    cases: list

    def table(self):
        """Rows ``(suite, invariant, cases, worst, tol, failures)`` in first-seen order."""
        rows = {}
        for case in self.cases:
            for c in case.checks:
                key = (case.suite, c.name)
                row = rows.setdefault(key, [case.suite, c.name, 0, 0.0, c.tol, 0])
                row[2] += 1
                row[3] = max(row[3], c.value)
                row[5] += not c.ok
        return [tuple(r) for r in rows.values()]

    def failures(self):
        return [(case, c) for case in self.cases for c in case.checks if not c.ok]

    @property
    def ok(self):
        return not self.failures()


def run_suite(scope: str, cases: int, seed: int, *, jobs: int = 1, kernels=None) -> SuiteSummary:
    """Run ``cases`` seeded cases (seeds ``seed, seed+1, ...``) of each suite in ``scope``.

    ``scope`` is ``"kernels"``, ``"riccati"`` or ``"all"``. Cases may run on
    ``jobs`` threads; results are ordered by suite and seed regardless.
    """
    names = list(SUITES) if scope == "all" else [scope]
    if any(n not in SUITES for n in names):
        raise ValueError(f"unknown scope {scope!r}")
    work = [(SUITES[n], (seed + i) % 2**64) for n in names for i in range(cases)]

    def one(item):
        fn, s = item
        try:
            return fn(s, kernels=kernels)
        except Exception as exc:
            name = "kernels" if fn is kernel_case else "riccati"
            return CaseResult(name, s, "?", [Check("case_setup", math.inf, 0.0, f"{type(exc).__name__}: {exc}")])

    if jobs > 1 and len(work) > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(one, work))
    else:
        results = [one(w) for w in work]
    return SuiteSummary(results)
