"""Acceptance criteria 1-9, each at its stated tolerance.

Every test prints one ``CRITERION n ... PASS|FAIL`` line (visible with
``pytest -v``) before asserting. Timing criteria pin the process to one CPU
where the platform allows it and use the compiled kernels.
"""

import os
import statistics
import time

import numpy as np
import pytest

from hyhup import backend
from hyhup.bench import bench_riccati, bench_update
from hyhup.counted import FlopCounter, closed_form_fma, hyh_update_counted
from hyhup.kernels import hyh_update, hyh_update_block, reconstruct_q
from hyhup.matcore import max_rel_diff, reference_cholesky, residual_fro, sym_low_rank_form
from hyhup.probgen import GenConfig, gen_ocp, gen_spd_factor, gen_update, perturb_active_set, rng
from hyhup.riccati import (
    dense_kkt_solve,
    kkt_residual,
    riccati_factor,
    riccati_solve,
    riccati_update,
)
from hyhup.verify import _kernel_shape, _riccati_shape

KERNEL_CASES = 500
OCP_CASES = 150


@pytest.fixture
def report(capsys):
    def emit(n, ok, detail):
        with capsys.disabled():
            print(f"\nCRITERION {n}: {'PASS' if ok else 'FAIL'}  {detail}")
        return ok

    return emit


@pytest.fixture
def one_cpu():
    if not hasattr(os, "sched_setaffinity"):
        yield
        return
    before = os.sched_getaffinity(0)
    os.sched_setaffinity(0, {min(before)})
    try:
        yield
    finally:
        os.sched_setaffinity(0, before)


needs_compiled = pytest.mark.skipif("compiled" not in backend.available(), reason="extension not built")


def kernel_instances():
    for seed in range(KERNEL_CASES):
        n, m, r, signs = _kernel_shape(seed)
        cfg = GenConfig(seed=seed, n=n, m=m)
        L = gen_spd_factor(cfg)
        A, sigma = gen_update(cfg, L, signs)
        yield seed, n, m, r, L, A, sigma


def test_criterion_1_update_reconstruction(report):
    t0 = time.perf_counter()
    worst, rs, mixed, big = 0.0, set(), 0, 0
    for seed, n, m, r, L, A, sigma in kernel_instances():
        out = hyh_update(L, A, sigma, r)
        worst = max(worst, residual_fro(out, sym_low_rank_form(L, A, sigma)))
        rs.add(r)
        mixed += bool(np.any(sigma > 0) and np.any(sigma < 0))
        big = max(big, n)
    elapsed = time.perf_counter() - t0
    ok = worst <= 1e-10 and elapsed < 60.0 and rs == {1, 2, 4, 8}
    report(1, ok, f"{KERNEL_CASES} cases (max n {big}, {mixed} mixed-sign), worst residual {worst:.2e} "
                  f"<= 1e-10, suite {elapsed:.1f} s < 60 s")
    assert ok


def test_criterion_2_s_orthogonality_and_annihilation(report):
    worst_o = worst_a = 0.0
    count = 0
    for k in range(1, 33):
        for rep in range(4):
            seed = 1000 * k + rep
            g = rng(seed, 4)
            m = int(g.integers(1, 17))
            signs = np.where(g.random(m) < 0.5, -1.0, 1.0) * g.uniform(0.5, 2.0, m)
            cfg = GenConfig(seed=seed, n=k, m=m)
            L = gen_spd_factor(cfg)
            A, sigma = gen_update(cfg, L, signs)
            LA = np.hstack((L, A))
            Lt, W = hyh_update_block(np.array(L, order="F"), np.array(A, order="F"), sigma)
            Q = reconstruct_q(W, sigma)
            S = np.diag(np.concatenate((np.ones(k), sigma)))
            worst_o = max(worst_o, np.linalg.norm(Q @ S @ Q.T - S) / (1 + np.linalg.norm(S)))
            target = np.hstack((np.tril(Lt), np.zeros((k, m))))
            worst_a = max(worst_a, np.linalg.norm(LA @ Q - target) / np.linalg.norm(LA))
            count += 1
    ok = worst_o <= 1e-11 and worst_a <= 1e-11
    report(2, ok, f"{count} blocks k=1..32: S-orthogonality {worst_o:.2e}, annihilation {worst_a:.2e} "
                  "(relative, <= 1e-11)")
    assert ok


def test_criterion_3_oracle_equivalence(report):
    worst, nonpos = 0.0, 0
    for seed, n, m, r, L, A, sigma in kernel_instances():
        out = np.tril(hyh_update(L, A, sigma, r))
        ref = reference_cholesky(sym_low_rank_form(L, A, sigma))
        worst = max(worst, max_rel_diff(out, ref))
        nonpos += int(np.sum(np.diag(out) <= 0)) + int(np.sum(np.diag(ref) <= 0))
    ok = worst <= 1e-9 and nonpos == 0
    report(3, ok, f"{KERNEL_CASES} cases: worst elementwise relative difference {worst:.2e} <= 1e-9, "
                  f"{nonpos} nonpositive diagonals")
    assert ok


@pytest.mark.parametrize("n,m,r", [(8, 2, 1), (16, 4, 4), (64, 8, 8)])
def test_criterion_4_operation_counts(report, n, m, r):
    cfg = GenConfig(seed=n, n=n, m=m)
    L = gen_spd_factor(cfg)
    A, sigma = gen_update(cfg, L, np.where(np.arange(m) % 2 == 0, 1.0, -1.0))
    c = FlopCounter()
    hyh_update_counted(L, A, sigma, r, c)
    expect = closed_form_fma(n, m, r)
    ok = abs(c.fma - expect) <= 4 * n and c.sqrt == n and c.div == 2 * n
    report(4, ok, f"(n,m,r)=({n},{m},{r}): fma {c.fma} vs {expect:g} (slack {4 * n}), "
                  f"sqrt {c.sqrt} (= {n}), div {c.div} (= {2 * n})")
    assert ok


def _force_indefinite(kern):
    # kernel table whose chained update reports a failed pivot one stage below the top
    import types

    ns = types.SimpleNamespace(**{k: getattr(kern, k) for k in dir(kern) if not k.startswith("__")})

    def chain(Lnew, nu, j_top, *args, **kw):
        status, j = kern.update_chain(Lnew, nu, j_top, *args, **kw)
        return (0, max(j_top - 1, j_top + 1 - Lnew.shape[2])) if status == -1 else (status, j)

    ns.update_chain = chain
    return ns


def test_criterion_5_update_refactor_equivalence(report):
    worst = 0.0
    reasons = {"budget": 0, "indefinite": 0, None: 0}
    modes = {"single": 0, "quarter": 0, "all": 0}
    forced = _force_indefinite(backend.kernels)
    for seed in range(OCP_CASES):
        dims, mode = _riccati_shape(seed)
        assert dims.N <= 16 and dims.nx <= 8 and dims.nu <= 4 and max(dims.nc) <= 12
        frac = {"single": 0.0, "quarter": 0.25, "all": 1.0}[mode]
        cfg = GenConfig(seed=seed, dims=dims, flip_fraction=frac)
        data, sigma = gen_ocp(cfg)
        new = perturb_active_set(sigma, cfg, count=min(1, sigma.total()) if mode == "single" else None)
        old = riccati_factor(data, sigma)
        fresh = riccati_factor(data, new)
        kern = forced if seed % 10 == 9 else None
        upd, rep = riccati_update(data, sigma, new, old, kernels=kern, return_report=True)
        worst = max(worst, max(max_rel_diff(a, b) for a, b in zip(upd.arrays(), fresh.arrays())))
        reasons[rep.reason] += 1
        modes[mode] += 1
    ok = worst <= 1e-8 and reasons["budget"] > 0 and reasons["indefinite"] > 0
    report(5, ok, f"{OCP_CASES} OCPs {modes}: worst {worst:.2e} <= 1e-8; fallbacks "
                  f"budget={reasons['budget']} indefinite={reasons['indefinite']}")
    assert ok


def test_criterion_6_newton_step(report):
    worst_kkt, worst_dense, dense_n = 0.0, 0.0, 0
    for seed in range(OCP_CASES):
        dims, _ = _riccati_shape(seed)
        data, sigma = gen_ocp(GenConfig(seed=seed, dims=dims))
        step = riccati_solve(riccati_factor(data, sigma), data)
        worst_kkt = max(worst_kkt, kkt_residual(data, sigma, step))
        if dims.N <= 8:
            ref = dense_kkt_solve(data, sigma)
            worst_dense = max(worst_dense, max(max_rel_diff(a, b) for a, b in zip(step.du + step.dx, ref.du + ref.dx)))
            dense_n += 1
    ok = worst_kkt <= 1e-9 and worst_dense <= 1e-8 and dense_n > 0
    report(6, ok, f"kkt residual {worst_kkt:.2e} <= 1e-9 on {OCP_CASES} instances; dense KKT agreement "
                  f"{worst_dense:.2e} <= 1e-8 on {dense_n} with N <= 8")
    assert ok


@needs_compiled
def test_criterion_7_kernel_speedup(report, one_cpu):
    kern = backend.load("compiled")
    rows = bench_update(64, [1, 2, 4], [8], 400, 0, kernels=kern)
    ratios = {}
    for m in (1, 2, 4):
        base = next(r for r in rows if r.method == "full_factorization" and r.m == m)
        upd = next(r for r in rows if r.method == "hyh_update" and r.m == m)
        ratios[m] = upd.median_ns / base.median_ns
    ok = max(ratios.values()) <= 0.5
    detail = ", ".join(f"m={m}: {v:.2f}" for m, v in ratios.items())
    report(7, ok, f"n=64 r=8, median update / own syrk+potrf baseline (400 reps): {detail} (<= 0.5)")
    assert ok


def _riccati_ratio(nc, flip=0.25, flip_count=None, reps=60):
    rows = bench_riccati(24, 24, 8, [nc], flip, reps, 0, flip_count=flip_count, r=8,
                         kernels=backend.load("compiled"))
    t = {r.method: r.median_ns for r in rows}
    return t["riccati_update"] / t["riccati_factor"]


@needs_compiled
def test_criterion_8_ocp_speedup(report, one_cpu):
    quarter = {nc: _riccati_ratio(nc) for nc in (1, 2, 4, 6, 8)}
    single = {nc: _riccati_ratio(nc, flip_count=1) for nc in (1, 4, 8, 16, 24, 32)}
    ok = max(quarter.values()) < 1.0 and max(single.values()) <= 0.5
    q = ", ".join(f"{k}: {v:.2f}" for k, v in quarter.items())
    s = ", ".join(f"{k}: {v:.2f}" for k, v in single.items())
    report(8, ok, f"N=24 nx=24 nu=8 update/factor medians; 25% flips by nc {{{q}}} (< 1); "
                  f"single flip by nc {{{s}}} (<= 0.5)")
    assert ok


def test_criterion_9_trivial_paths(report):
    bad = []
    for name in backend.available():
        kern = backend.load(name)
        for seed in range(10):
            dims, _ = _riccati_shape(seed)
            data, sigma = gen_ocp(GenConfig(seed=seed, dims=dims))
            f = riccati_factor(data, sigma, kernels=kern)
            same = riccati_update(data, sigma, PenaltySchedule_copy(sigma), f, kernels=kern)
            if not all(a.tobytes() == b.tobytes() for a, b in zip(same.arrays(), f.arrays())):
                bad.append(f"{name}: riccati seed {seed}")
        for seed in range(20):
            n = 1 + seed * 6
            L = gen_spd_factor(GenConfig(seed=seed, n=n))
            for A in (np.zeros((n, 3)), np.zeros((n, 0))):
                sigma = np.array([1.0, -1.0, 2.0][: A.shape[1]])
                out = hyh_update(L, A, sigma, 1 + seed % 8, kernels=kern)
                if np.tril(out).tobytes() != np.tril(L).tobytes():
                    bad.append(f"{name}: n={n} m={A.shape[1]}")
    ok = not bad
    report(9, ok, "unchanged penalties keep factors bitwise; A=0 and m=0 keep L bitwise"
                  + ("" if ok else f"; broken: {bad[:3]}"))
    assert ok


def PenaltySchedule_copy(sigma):
    # equal values in fresh arrays, so the no-op is decided by comparison, not identity
    from hyhup.riccati import PenaltySchedule

    return PenaltySchedule(tuple(v.copy() for v in sigma.sigma))
