"""Command-line entry point: ``hyhup {verify,bench-update,bench-riccati,bench-backends,gen}``.

Exit status: 0 on success, 1 when a verification invariant or a benchmark
residual check fails, 2 on usage or I/O errors.
"""

from __future__ import annotations

import argparse
import contextlib
import dataclasses
import sys

import numpy as np

from . import backend
from .bench import ResidualBreach, bench_riccati, bench_update, write_csv
from .probgen import GenConfig, gen_ocp, gen_spd_factor, gen_update, load_case, save_ocp_case, save_update_case
from .riccati import OcpDims
from .verify import run_suite

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2


def _seed(text):
    try:
        v = int(text, 0)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an integer: {text!r}") from None
    if not 0 <= v < 2**64:
        raise argparse.ArgumentTypeError("seed must fit in 64 unsigned bits")
    return v


def _int_list(text):
    """``"1,2,8"`` or ranges like ``"1-16"`` (inclusive), mixed freely."""
    out = []
    try:
        for part in text.split(","):
            part = part.strip()
            if "-" in part[1:]:
                lo, hi = part.split("-", 1)
                out.extend(range(int(lo), int(hi) + 1))
            elif part:
                out.append(int(part))
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad integer list {text!r}") from None
    if not out or min(out) < 0:
        raise argparse.ArgumentTypeError(f"bad integer list {text!r}")
    return out


def _count(text):
    v = int(text)
    if v < 0:
        raise argparse.ArgumentTypeError("must be nonnegative")
    return v


def _positive(text):
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError("must be at least 1")
    return v


def _fraction(text):
    v = float(text)
    if not 0.0 <= v <= 1.0:
        raise argparse.ArgumentTypeError("must lie in [0, 1]")
    return v


@contextlib.contextmanager
def _output(path):
    if path in (None, "-"):
        yield sys.stdout
    else:
        with open(path, "w", newline="") as fh:
            yield fh


def _kernels(name):
    return backend.load(name)


def cmd_verify(args):
    if args.cases == 0:
        print("warning: --cases 0, no cases run", file=sys.stderr)
        return EXIT_OK
    summary = run_suite(args.scope, args.cases, args.seed, jobs=args.jobs, kernels=_kernels(args.backend))
    print(f"{'suite':<8} {'invariant':<24} {'cases':>5} {'worst':>10} {'tol':>8}  status")
    for suite, name, n, worst, tol, bad in summary.table():
        status = "PASS" if bad == 0 else f"FAIL ({bad})"
        print(f"{suite:<8} {name:<24} {n:>5} {worst:>10.2e} {tol:>8.0e}  {status}")
    fails = summary.failures()
    for case, c in fails:
        extra = f" [{c.detail}]" if c.detail else ""
        print(f"FAILED {case.suite}/{c.name}: seed={case.seed} ({case.shape}) "
              f"value {c.value:.3e} > tol {c.tol:.0e}{extra}")
    return EXIT_OK if not fails else EXIT_FAIL


def cmd_bench_update(args):
    case = None
    if args.case:
        kind, payload, seed = load_case(args.case)
        if kind != "update":
            raise ValueError(f"{args.case} holds an {kind} case, expected an update case")
        case = payload
    rows = bench_update(args.n, args.m, args.r, args.reps, args.seed, case=case, kernels=_kernels(args.backend))
    with _output(args.out) as fh:
        write_csv(rows, fh)
    return EXIT_OK


def cmd_bench_riccati(args):
    case = None
    if args.case:
        kind, payload, seed = load_case(args.case)
        if kind != "ocp":
            raise ValueError(f"{args.case} holds an {kind} case, expected an ocp case")
        case = payload
    rows = bench_riccati(args.N, args.nx, args.nu, args.nc, args.flip, args.reps, args.seed,
                         flip_count=args.flip_count, r=args.block, case=case, kernels=_kernels(args.backend))
    with _output(args.out) as fh:
        write_csv(rows, fh)
    return EXIT_OK


def cmd_bench_backends(args):
    rows = []
    for name in backend.available():
        for rec in bench_update(args.n, args.m, args.r, args.reps, args.seed, kernels=backend.load(name)):
            rows.append(dataclasses.replace(rec, method=f"{rec.method}[{name}]"))
    with _output(args.out) as fh:
        write_csv(rows, fh)
    return EXIT_OK


def cmd_gen(args):
    if args.kind == "update":
        cfg = GenConfig(seed=args.seed, n=args.n, m=args.m)
        L = gen_spd_factor(cfg)
        signs = np.where(np.arange(args.m) % 2 == 0, 1.0, -1.0) if args.mixed else np.ones(args.m)
        A, sigma = gen_update(cfg, L, signs)
        save_update_case(args.out, L, A, sigma, seed=args.seed)
    else:
        cfg = GenConfig(seed=args.seed, dims=OcpDims(args.N, args.nx, args.nu, args.nc))
        data, sigma = gen_ocp(cfg)
        save_ocp_case(args.out, data, sigma, seed=args.seed)
    return EXIT_OK


def build_parser():
    p = argparse.ArgumentParser(prog="hyhup", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, default_seed=0):
        sp.add_argument("--seed", type=_seed, default=default_seed, help="64-bit instance seed")
        sp.add_argument("--backend", choices=("auto", "compiled", "python"), default="auto")

    v = sub.add_parser("verify", help="run the invariant suites on seeded cases")
    v.add_argument("--scope", choices=("kernels", "riccati", "all"), default="all")
    v.add_argument("--cases", type=_count, default=100)
    v.add_argument("--jobs", type=_positive, default=1, help="worker threads")
    common(v)
    v.set_defaults(func=cmd_verify)

    u = sub.add_parser("bench-update", help="hyh update vs full refactorization (CSV)")
    u.add_argument("--n", type=_positive, default=64)
    u.add_argument("--m", type=_int_list, default=_int_list("1-16"), help="e.g. 1-16 or 1,2,4")
    u.add_argument("--r", type=_int_list, default=[1, 4, 8])
    u.add_argument("--reps", type=_positive, default=50)
    u.add_argument("--case", help="npz case written by 'gen --kind update'")
    u.add_argument("--out", default="-")
    common(u)
    u.set_defaults(func=cmd_bench_update)

    r = sub.add_parser("bench-riccati", help="Riccati factor, solve and update timings (CSV)")
    r.add_argument("--N", type=_positive, default=24)
    r.add_argument("--nx", type=_positive, default=24)
    r.add_argument("--nu", type=_positive, default=8)
    r.add_argument("--nc", type=_int_list, default=[4, 8, 16, 32])
    r.add_argument("--flip", type=_fraction, default=0.25, help="fraction of penalties toggled")
    r.add_argument("--flip-count", type=_count, default=None, help="toggle exactly this many instead")
    r.add_argument("--block", type=_positive, default=8, help="update block size r")
    r.add_argument("--reps", type=_positive, default=30)
    r.add_argument("--case", help="npz case written by 'gen --kind ocp'")
    r.add_argument("--out", default="-")
    common(r)
    r.set_defaults(func=cmd_bench_riccati)

    b = sub.add_parser("bench-backends", help="compiled vs pure-Python update kernels (CSV)")
    b.add_argument("--n", type=_positive, default=64)
    b.add_argument("--m", type=_int_list, default=[1, 4, 16])
    b.add_argument("--r", type=_int_list, default=[4, 8])
    b.add_argument("--reps", type=_positive, default=20)
    b.add_argument("--out", default="-")
    b.add_argument("--seed", type=_seed, default=0)
    b.set_defaults(func=cmd_bench_backends)

    g = sub.add_parser("gen", help="write a seeded benchmark case (npz)")
    g.add_argument("--kind", choices=("update", "ocp"), required=True)
    g.add_argument("--n", type=_positive, default=64)
    g.add_argument("--m", type=_count, default=4)
    g.add_argument("--mixed", action="store_true", help="alternate update and downdate columns")
    g.add_argument("--N", type=_positive, default=24)
    g.add_argument("--nx", type=_positive, default=24)
    g.add_argument("--nu", type=_positive, default=8)
    g.add_argument("--nc", type=_count, default=8)
    g.add_argument("--out", required=True)
    g.add_argument("--seed", type=_seed, default=0)
    g.set_defaults(func=cmd_gen)
    return p


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ResidualBreach as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAIL
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
