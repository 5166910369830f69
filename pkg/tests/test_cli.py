import csv
import json
import subprocess
import sys

import numpy as np
import pytest

from roetrace import (build_space, diagonal_operator, dump_kernel_csv,
                      theta_value)
from roetrace.spectral import hodge_laplacian


def run_cli(*argv, env=None):
    cmd = [sys.executable, "-m", "roetrace.cli", *argv]
    full_env = None
    if env:
        import os
        full_env = {**os.environ, **env}
    return subprocess.run(cmd, capture_output=True, text=True, env=full_env)


def read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.reader(fh))


def test_space_build_writes_sites_and_manifest(tmp_path):
    out = tmp_path / "sites.csv"
    res = run_cli("space", "build", "--kind", "lattice", "--d", "1",
                  "--window", "10", "--out", str(out))
    assert res.returncode == 0
    rows = read_csv(out)
    assert rows[0][:2] == ["site", "grade"]
    assert len(rows) - 1 == 21
    man = json.loads((tmp_path / "sites.csv.manifest.json").read_text())
    assert man["command"] == "space build"
    assert len(man["config_hash"]) == 16
    assert man["versions"]["numpy"] == np.__version__


def test_space_build_from_config_with_override(tmp_path):
    cfg = tmp_path / "space.ini"
    cfg.write_text("[space]\nkind = lattice\nd = 1\nwindow = 10\n")
    out = tmp_path / "sites.csv"
    res = run_cli("space", "build", "--space", str(cfg),
                  "--window", "12", "--out", str(out))
    assert res.returncode == 0
    assert len(read_csv(out)) - 1 == 25     # override wins


def test_trace_phi_round_trip(tmp_path):
    spc = build_space("lattice", d=1, window=30)
    vals = np.full(spc.n_sites, 1.5)
    vals[np.abs(spc.coords[:, 0]) <= 3] += 0.25
    A = diagonal_operator(spc, vals)
    op_csv = tmp_path / "op.csv"
    dump_kernel_csv(A, op_csv)
    out = tmp_path / "phi.csv"
    res = run_cli("trace", "phi", "--kind", "lattice", "--d", "1",
                  "--window", "30", "--op", str(op_csv),
                  "--limit", "extrapolate", "--nmax", "25",
                  "--out", str(out))
    assert res.returncode == 0, res.stderr
    rows = read_csv(out)
    i = next(k for k, r in enumerate(rows) if r[0] == "value")
    final = dict(zip(rows[i], rows[i + 1]))
    assert float(final["value"]) == pytest.approx(1.5, abs=1e-4)
    assert final["cone_member"] == "True"


def test_trace_counterexample(tmp_path):
    out = tmp_path / "cx.csv"
    res = run_cli("trace", "counterexample", "--n", "4", "--out", str(out))
    assert res.returncode == 0, res.stderr
    rows = {r[0]: r[1:] for r in read_csv(out)[1:]}
    assert float(rows["tail_bound"][0]) < 6e-3
    assert float(rows["diag_average"][0]) == pytest.approx(1.0, abs=1e-2)


def test_heat_theta_matches_library_and_is_deterministic(tmp_path):
    out1 = tmp_path / "a.csv"
    out2 = tmp_path / "b.csv"
    argv = ("heat", "theta", "--kind", "lattice", "--d", "1",
            "--window", "24", "--tmin", "0.5", "--tmax", "4.0",
            "--points", "5")
    assert run_cli(*argv, "--out", str(out1)).returncode == 0
    assert run_cli(*argv, "--out", str(out2)).returncode == 0
    assert out1.read_bytes() == out2.read_bytes()
    rows = read_csv(out1)[1:]
    spc = build_space("lattice", d=1, window=24)
    delta = hodge_laplacian(spc, 0)
    for t_str, th_str, err_str in rows:
        val, _ = theta_value(delta, float(t_str))
        assert float(th_str) == pytest.approx(val, abs=1e-12)


def test_spectral_dos_and_ns_pipeline(tmp_path):
    dos = tmp_path / "dos.csv"
    res = run_cli("spectral", "dos", "--kind", "lattice", "--d", "1",
                  "--window", "16", "--grid", "0.0:4.0:41",
                  "--method", "oracle", "--out", str(dos))
    assert res.returncode == 0, res.stderr
    rows = read_csv(dos)[1:]
    lam = np.array([float(r[0]) for r in rows])
    N = np.array([float(r[1]) for r in rows])
    assert np.max(np.abs(N - np.arccos(1 - lam / 2) / np.pi)) < 1e-5

    theta_csv = tmp_path / "theta.csv"
    res = run_cli("heat", "theta", "--kind", "lattice", "--d", "1",
                  "--window", "16", "--tmin", "10", "--tmax", "10000",
                  "--points", "25", "--out", str(theta_csv))
    assert res.returncode == 0, res.stderr
    ns = tmp_path / "ns.csv"
    res = run_cli("spectral", "ns", "--kind", "lattice", "--d", "1",
                  "--window", "16", "--source", str(theta_csv),
                  "--out", str(ns))
    assert res.returncode == 0, res.stderr
    vals = {r[0]: r[1] for r in read_csv(ns)[1:]}
    assert float(vals["alpha_prime"]) == pytest.approx(1.0, abs=0.05)
    assert vals["wide_flag"] == "False"


def test_verify_all_passes(tmp_path):
    out = tmp_path / "verify.csv"
    res = run_cli("verify", "all", "--out", str(out))
    assert res.returncode == 0, res.stdout + res.stderr
    lines = [ln for ln in res.stdout.splitlines() if ln]
    assert sum("pass" in ln for ln in lines) >= 9
    assert "9/9 suites passed" in res.stdout
    rows = read_csv(out)[1:]
    assert len(rows) == 9
    assert all(r[1] == "pass" for r in rows)


def test_verify_deterministic_and_threaded(tmp_path):
    a = tmp_path / "a.csv"
    b = tmp_path / "b.csv"
    assert run_cli("verify", "all", "--out", str(a)).returncode == 0
    res = run_cli("verify", "all", "--out", str(b),
                  env={"ROETRACE_THREADS": "4"})
    assert res.returncode == 0
    assert a.read_bytes() == b.read_bytes()


def test_exit_codes():
    assert run_cli("frobnicate").returncode == 2
    assert run_cli("trace", "phi", "--out", "/tmp/x.csv",
                   "--op", "/nonexistent.csv").returncode == 2
    res = run_cli("space", "build", "--space", "/nonexistent.ini",
                  "--out", "/tmp/x.csv")
    assert res.returncode == 2
