import csv
import io
import subprocess
import sys
import time

import numpy as np
import pytest

from hyhup import cli, verify
from hyhup.bench import CSV_FIELDS


def run(capsys, *argv):
    code = cli.main(list(argv))
    out, err = capsys.readouterr()
    return code, out, err


def rows(text):
    return list(csv.DictReader(io.StringIO(text)))


def test_verify_kernels_passes(capsys):
    code, out, _ = run(capsys, "verify", "--scope", "kernels", "--cases", "100", "--seed", "42")
    assert code == 0
    assert "reconstruction" in out and "FAIL" not in out


def test_verify_all_threads_match_serial(capsys):
    a = verify.run_suite("all", 6, 5, jobs=1)
    b = verify.run_suite("all", 6, 5, jobs=3)
    assert [(c.suite, c.seed) for c in a.cases] == [(c.suite, c.seed) for c in b.cases]
    assert [x.value for c in a.cases for x in c.checks] == [x.value for c in b.cases for x in c.checks]


def test_verify_zero_cases_warns(capsys):
    code, _, err = run(capsys, "verify", "--scope", "all", "--cases", "0")
    assert code == 0 and "warning" in err


def test_verify_names_broken_invariant(capsys, monkeypatch):
    # flip the sign of the weights used by the oracle fixture
    real = verify.sym_low_rank_form
    monkeypatch.setattr(verify, "sym_low_rank_form", lambda L, A, s: real(L, A, -np.asarray(s)))
    code, out, _ = run(capsys, "verify", "--scope", "kernels", "--cases", "5", "--seed", "1")
    assert code == 1
    assert "FAILED kernels/reconstruction: seed=" in out


def test_verify_crashing_case_is_a_failure(capsys, monkeypatch):
    def boom(*a, **k):
        raise RuntimeError("broken fixture")

    monkeypatch.setattr(verify, "gen_spd_factor", boom)
    code, out, _ = run(capsys, "verify", "--scope", "kernels", "--cases", "2")
    assert code == 1 and "case_setup" in out and "broken fixture" in out


def test_bench_update_rows(capsys):
    code, out, _ = run(capsys, "bench-update", "--n", "64", "--m", "1-16", "--r", "1,4,8", "--reps", "3")
    assert code == 0
    lines = out.splitlines()
    assert lines[0] == ",".join(CSV_FIELDS)
    data = rows(out)
    assert len(data) == 16 * (3 + 1)
    assert all(int(r["median_ns"]) > 0 and float(r["residual"]) <= 1e-9 for r in data)
    assert {r["method"] for r in data} == {"full_factorization", "hyh_update"}
    assert all(r["N"] == "" for r in data)


def test_bench_update_zero_rank(capsys):
    _, out, _ = run(capsys, "bench-update", "--n", "8", "--m", "0", "--r", "4", "--reps", "3")
    upd = [r for r in rows(out) if r["method"] == "hyh_update"]
    assert float(upd[0]["residual"]) == 0.0


def test_bench_update_residuals_reproducible(capsys):
    args = ("bench-update", "--n", "20", "--m", "1,3", "--r", "2", "--reps", "5", "--seed", "9")
    _, a, _ = run(capsys, *args)
    _, b, _ = run(capsys, *args)
    assert [r["residual"] for r in rows(a)] == [r["residual"] for r in rows(b)]


def test_bench_riccati_smoke(capsys):
    t0 = time.perf_counter()
    code, out, _ = run(capsys, "bench-riccati", "--N", "4", "--nx", "4", "--nu", "2", "--nc", "2,4", "--reps", "3")
    assert time.perf_counter() - t0 < 1.0
    assert code == 0
    data = rows(out)
    assert [r["method"] for r in data] == ["riccati_factor", "riccati_solve", "riccati_update"] * 2
    assert all(float(r["residual"]) <= 1e-7 for r in data)


def test_bench_riccati_no_flips(capsys):
    _, out, _ = run(capsys, "bench-riccati", "--N", "3", "--nx", "2", "--nu", "1", "--nc", "3", "--flip", "0",
                    "--reps", "3")
    upd = [r for r in rows(out) if r["method"] == "riccati_update"]
    assert float(upd[0]["residual"]) == 0.0


def test_gen_and_bench_case_files(capsys, tmp_path):
    u, o = tmp_path / "u.npz", tmp_path / "o.npz"
    assert run(capsys, "gen", "--kind", "update", "--n", "12", "--m", "3", "--mixed", "--out", str(u))[0] == 0
    assert run(capsys, "gen", "--kind", "ocp", "--N", "3", "--nx", "3", "--nu", "1", "--nc", "2",
               "--out", str(o))[0] == 0
    code, out, _ = run(capsys, "bench-update", "--case", str(u), "--r", "4", "--reps", "3")
    assert code == 0 and rows(out)[0]["n"] == "12"
    code, out, _ = run(capsys, "bench-riccati", "--case", str(o), "--flip-count", "1", "--reps", "3")
    assert code == 0 and rows(out)[0]["N"] == "3"
    code, _, err = run(capsys, "bench-riccati", "--case", str(u), "--reps", "3")
    assert code == 2 and "update case" in err


def test_csv_to_file(capsys, tmp_path):
    path = tmp_path / "out.csv"
    code, out, _ = run(capsys, "bench-backends", "--n", "8", "--m", "1", "--r", "4", "--reps", "3", "--out", str(path))
    assert code == 0 and out == ""
    methods = {r["method"] for r in csv.DictReader(path.open())}
    assert "hyh_update[python]" in methods


def test_residual_breach_exits_1(capsys, monkeypatch):
    import hyhup.bench as bench

    monkeypatch.setattr(bench, "residual_fro", lambda *a: 1.0)
    code, _, err = run(capsys, "bench-update", "--n", "8", "--m", "1", "--r", "4", "--reps", "3")
    assert code == 1 and "exceeds" in err


@pytest.mark.parametrize("argv", [
    ["verify", "--scope", "nope"],
    ["verify", "--cases", "-1"],
    ["bench-update", "--seed", str(2**64)],
    ["bench-update", "--m", "x"],
    ["bench-riccati", "--flip", "2"],
    [],
])
def test_usage_errors_exit_2(capsys, argv):
    with pytest.raises(SystemExit) as exc:
        cli.main(argv)
    assert exc.value.code == 2


def test_io_error_exits_2(capsys, tmp_path):
    code, _, err = run(capsys, "bench-update", "--n", "4", "--m", "1", "--r", "1", "--reps", "3",
                       "--out", str(tmp_path / "missing" / "x.csv"))
    assert code == 2 and "error" in err
    code, _, _ = run(capsys, "bench-update", "--case", str(tmp_path / "none.npz"), "--reps", "3")
    assert code == 2


def test_too_few_reps_is_usage_error(capsys):
    code, _, err = run(capsys, "bench-update", "--n", "4", "--m", "1", "--reps", "2")
    assert code == 2 and "reps" in err


def test_module_entry_point_python_backend():
    proc = subprocess.run([sys.executable, "-m", "hyhup", "verify", "--scope", "kernels", "--cases", "2"],
                          capture_output=True, text=True, env={"HYHUP_BACKEND": "python", "PATH": ""}, timeout=120)
    assert proc.returncode == 0, proc.stderr
    assert "reconstruction" in proc.stdout and "FAIL" not in proc.stdout
