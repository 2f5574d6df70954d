"""Timing harness: blocked update vs full refactorization, and the Riccati steps.

Protocol: inputs are copied into preallocated work buffers outside the timed
region, at least two warm-up runs are discarded, and the median of ``reps``
``perf_counter_ns`` samples is reported. Methods compared against each other
are sampled round-robin within each repetition, so frequency or cache drift
on the host hits all of them alike. Every timed result is checked
against its oracle; a residual over the threshold raises
:class:`ResidualBreach` instead of producing a row.
"""

from __future__ import annotations

import csv
import statistics
import time
from dataclasses import asdict, dataclass

import numpy as np

from . import backend
from .matcore import max_rel_diff, residual_fro, sym_low_rank_form
from .probgen import GenConfig, gen_ocp, gen_spd_factor, gen_update, perturb_active_set
from .riccati import OcpDims, factor_residual, kkt_residual, riccati_factor, riccati_solve, riccati_update

__all__ = [
    "CSV_FIELDS",
    "BenchRecord",
    "ResidualBreach",
    "median_ns",
    "interleaved_ns",
    "bench_update",
    "bench_riccati",
    "write_csv",
]

CSV_FIELDS = ("method", "n", "m", "r", "N", "nx", "nu", "nc", "flip", "reps", "median_ns", "residual", "seed")
WARMUP = 2
UPDATE_TOL = 1e-9
FACTOR_TOL = 1e-9
SOLVE_TOL = 1e-9
RICCATI_UPDATE_TOL = 1e-7


class ResidualBreach(RuntimeError):
    """A timed run produced a result outside its residual threshold."""


@dataclass(frozen=True)
class BenchRecord:
    method: str
    reps: int
    median_ns: int
    residual: float
    seed: int
    n: int | None = None
    m: int | None = None
    r: int | None = None
    N: int | None = None
    nx: int | None = None
    nu: int | None = None
    nc: int | None = None
    flip: float | None = None

    def __post_init__(self):
        if self.median_ns <= 0:
            raise ValueError("median_ns must be positive")

    def row(self):
        d = asdict(self)
        return {k: ("" if d[k] is None else d[k]) for k in CSV_FIELDS}


def median_ns(run, reps, *, prepare=None, check=None, warmup=WARMUP):
    """Median wall time of ``run()`` in ns; ``prepare()`` and ``check()`` run untimed around it.

    Returns ``(median, worst check value)``.
    """
    if reps < 1:
        raise ValueError("reps must be at least 1")
    worst = 0.0
    samples = []
    for i in range(warmup + reps):
        if prepare is not None:
            prepare()
        t0 = time.perf_counter_ns()
        out = run()
        t1 = time.perf_counter_ns()
        if check is not None:
            worst = max(worst, check(out))
        if i >= warmup:
            samples.append(t1 - t0)
    return max(1, int(statistics.median(samples))), worst


def interleaved_ns(jobs, reps, *, warmup=WARMUP):
    """Like :func:`median_ns` for several ``(run, prepare, check)`` jobs sampled round-robin.

    Returns one ``(median, worst check value)`` pair per job.
    """
    if reps < 1:
        raise ValueError("reps must be at least 1")
    samples = [[] for _ in jobs]
    worst = [0.0] * len(jobs)
    for i in range(warmup + reps):
        for k, (run, prepare, check) in enumerate(jobs):
            if prepare is not None:
                prepare()
            t0 = time.perf_counter_ns()
            out = run()
            t1 = time.perf_counter_ns()
            if check is not None:
                worst[k] = max(worst[k], check(out))
            if i >= warmup:
                samples[k].append(t1 - t0)
    return [(max(1, int(statistics.median(s))), w) for s, w in zip(samples, worst)]


def _guard(value, tol, what):
    if not value <= tol:
        raise ResidualBreach(f"{what}: residual {value:.3e} exceeds {tol:.0e}")
    return value


def bench_update(n, m_list, r_list, reps, seed, *, case=None, kernels=None):
    """Rows for ``full_factorization`` and ``hyh_update`` (one per r) for each m.

    The baseline forms ``L L^T + A S A^T`` with the rank-m accumulation and
    refactors it with the artifact's own Cholesky. ``case = (L, A, sigma)``
    replaces the generated instance (``n``, ``m_list`` are then taken from it).
    """
    kern = kernels or backend.kernels
    if reps < 3:
        raise ValueError("reps must be at least 3")
    if case is None:
        if n < 1:
            raise ValueError("n must be at least 1")
        L = gen_spd_factor(GenConfig(seed=seed, n=n))
        instances = []
        for m in m_list:
            A, sigma = gen_update(GenConfig(seed=seed, n=n, m=m), L, np.ones(m))
            instances.append((L, A, sigma))
    else:
        instances = [case]
    rows = []
    for L, A, sigma in instances:
        L = np.asfortranarray(np.tril(L))
        A = np.asfortranarray(A, dtype=np.float64)
        sigma = np.ascontiguousarray(sigma, dtype=np.float64)
        n, m = A.shape
        target = sym_low_rank_form(L, A, sigma)
        H0 = np.asfortranarray(L @ L.T)
        Hw = np.empty_like(H0, order="F")

        def full():
            kern.syrk_acc(Hw, A, sigma)
            return kern.potrf(Hw)

        def check_full(status):
            if status != -1:
                raise ResidualBreach(f"baseline factorization failed at pivot {status}")
            return residual_fro(np.tril(Hw), target)

        Lw = np.empty_like(L, order="F")
        Aw = np.empty_like(A, order="F")

        def prepare():
            np.copyto(Lw, L)
            np.copyto(Aw, A)

        def check_upd(status):
            if status != -1:
                raise ResidualBreach(f"update failed at column {status}")
            return residual_fro(Lw, target)

        jobs = [(full, lambda: np.copyto(Hw, H0), check_full)]
        for r in r_list:
            jobs.append((lambda r=r: kern.update_cols(Lw, Aw, sigma, r, 0, n), prepare, check_upd))
        (t, res), *timed = interleaved_ns(jobs, reps)
        rows.append(BenchRecord("full_factorization", reps, t, _guard(res, UPDATE_TOL, "full_factorization"),
                                seed, n=n, m=m))
        for r, (t, res) in zip(r_list, timed):
            rows.append(BenchRecord("hyh_update", reps, t, _guard(res, UPDATE_TOL, f"hyh_update r={r}"),
                                    seed, n=n, m=m, r=r))
    return rows


def _factor_residual(fac, ref):
    return max(max_rel_diff(a, b) for a, b in zip(fac.arrays(), ref.arrays()))


def bench_riccati(N, nx, nu, nc_list, flip, reps, seed, *, flip_count=None, r=8, case=None, kernels=None):
    """Rows for ``riccati_factor``, ``riccati_solve`` and ``riccati_update`` per nc.

    The update goes from the generated penalties to a perturbation with
    ``ceil(flip * total)`` (or ``flip_count``) toggled entries; the factor and
    solve rows are timed at the perturbed penalties. ``case = (data, sigma)``
    replaces the generated instance.
    """
    kern = kernels or backend.kernels
    if reps < 3:
        raise ValueError("reps must be at least 3")
    if not 0.0 <= flip <= 1.0:
        raise ValueError("flip fraction must lie in [0, 1]")
    if case is None:
        instances = []
        for nc in nc_list:
            cfg = GenConfig(seed=seed, dims=OcpDims(N, nx, nu, nc), flip_fraction=flip)
            instances.append((cfg, *gen_ocp(cfg)))
    else:
        data, sigma = case
        instances = [(GenConfig(seed=seed, dims=data.dims, flip_fraction=flip), data, sigma)]
    rows = []
    for cfg, data, sigma in instances:
        d = data.dims
        nc = d.nc[0] if len(set(d.nc)) == 1 else None
        count = None if flip_count is None else min(flip_count, sigma.total())
        sigma_new = perturb_active_set(sigma, cfg, count=count)
        shown = flip if flip_count is None else (count / sigma.total() if sigma.total() else 0.0)
        dims = dict(N=d.N, nx=d.nx, nu=d.nu, nc=nc, flip=shown)
        old = riccati_factor(data, sigma, kernels=kern)
        ref = riccati_factor(data, sigma_new, kernels=kern)

        (tf, rf), (ts, rs), (tu, ru) = interleaved_ns([
            (lambda: riccati_factor(data, sigma_new, kernels=kern), None,
             lambda f: factor_residual(data, sigma_new, f)),
            (lambda: riccati_solve(ref, data), None, lambda s: kkt_residual(data, sigma_new, s)),
            (lambda: riccati_update(data, sigma, sigma_new, old, r=r, kernels=kern), None,
             lambda f: _factor_residual(f, ref)),
        ], reps)
        rows.append(BenchRecord("riccati_factor", reps, tf, _guard(rf, FACTOR_TOL, "riccati_factor"), seed, **dims))
        rows.append(BenchRecord("riccati_solve", reps, ts, _guard(rs, SOLVE_TOL, "riccati_solve"), seed, **dims))
        rows.append(BenchRecord("riccati_update", reps, tu,
                                _guard(ru, RICCATI_UPDATE_TOL, "riccati_update"), seed, **dims))
    return rows


def write_csv(records, stream):
    w = csv.DictWriter(stream, fieldnames=CSV_FIELDS, lineterminator="\n")
    w.writeheader()
    for rec in records:
        w.writerow(rec.row())
