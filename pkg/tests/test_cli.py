import fcntl
import subprocess
import sys

import numpy as np
import pytest

from tqg import io as tio
from tqg.cli import main
from tqg.model import helmholtz_filter
from tqg.sphere import evaluate_on_grid

CONFIG = """\
n = 12
rossby = 0.01
gamma = 100
dt = 0.01
t_final = {t_final}
seed = 21
init_lmax = 8
diag_every = 2
snapshot_every = 3
"""


@pytest.fixture
def config(tmp_path):
    def make(t_final=0.1, extra=""):
        p = tmp_path / f"cfg_{t_final}.txt"
        p.write_text(CONFIG.format(t_final=t_final) + extra)
        return str(p)

    return make


def read_csv_rows(path):
    return path.read_text().splitlines()


def test_init_is_deterministic(tmp_path, config):
    a, b = tmp_path / "a.tqgz", tmp_path / "b.tqgz"
    assert main(["init", "--config", config(), "--out", str(a)]) == 0
    assert main(["init", "--config", config(), "--out", str(b)]) == 0
    assert a.read_bytes() == b.read_bytes()
    snap = tio.read_snapshot(a)
    assert snap.n == 12 and snap.time == 0.0 and snap.seed == 21


def test_run_zero_time(tmp_path, config):
    out = tmp_path / "run"
    assert main(["run", "--config", config(0.0), "--out-dir", str(out)]) == 0
    assert [p.name for p in (out / "snapshots").iterdir()] == ["snap_00000000.tqgz"]
    rows = read_csv_rows(out / "diagnostics.csv")
    assert len(rows) == 2 and rows[1].startswith("0,0,")
    assert tio.load_config(out / "config.txt").t_final == 0.0


def test_run_outputs_and_cadence(tmp_path, config):
    out = tmp_path / "run"
    assert main(["run", "--config", config(0.1), "--out-dir", str(out)]) == 0
    names = sorted(p.name for p in (out / "snapshots").iterdir())
    assert names == [f"snap_{k:08d}.tqgz" for k in (0, 3, 6, 9, 10)]
    steps = [int(r.split(",")[0]) for r in read_csv_rows(out / "diagnostics.csv")[1:]]
    assert steps == [0, 2, 4, 6, 8, 10]
    final = tio.read_snapshot(out / "snapshots" / "snap_00000010.tqgz")
    assert final.time == pytest.approx(0.1)


def test_run_from_state(tmp_path, config):
    snap = tmp_path / "init.tqgz"
    main(["init", "--config", config(), "--out", str(snap)])
    a, b = tmp_path / "a", tmp_path / "b"
    assert main(["run", "--config", config(0.04), "--out-dir", str(a)]) == 0
    assert main(["run", "--config", config(0.04), "--state", str(snap), "--out-dir", str(b)]) == 0
    ra = tio.read_diagnostics(a / "diagnostics.csv")
    rb = tio.read_diagnostics(b / "diagnostics.csv")
    for x, y in zip(ra, rb):
        assert y.hamiltonian == pytest.approx(x.hamiltonian, rel=1e-12)


def test_resume_is_transparent(tmp_path, config):
    full, part = tmp_path / "full", tmp_path / "part"
    cfg = config(0.1)
    assert main(["run", "--config", cfg, "--out-dir", str(full)]) == 0
    assert main(["run", "--config", cfg, "--out-dir", str(part)]) == 0
    # simulate a crash after step 8 was logged but before its snapshot
    for k in (6, 9, 10):
        (part / "snapshots" / f"snap_{k:08d}.tqgz").unlink()
    text = (part / "diagnostics.csv").read_text()
    (part / "diagnostics.csv").write_text(text[: text.index("\n10,") + 6])  # torn last row
    assert main(["resume", "--out-dir", str(part)]) == 0
    a = tio.read_diagnostics(full / "diagnostics.csv")
    b = tio.read_diagnostics(part / "diagnostics.csv")
    assert [r.step for r in a] == [r.step for r in b]
    for x, y in zip(a, b):
        assert x.time == y.time
        assert y.hamiltonian == pytest.approx(x.hamiltonian, rel=1e-12)
        np.testing.assert_allclose(y.casimirs_b, x.casimirs_b, rtol=1e-10, atol=1e-12)
    # a finished run resumes to a no-op
    before = (part / "diagnostics.csv").read_bytes()
    assert main(["resume", "--out-dir", str(part)]) == 0
    assert (part / "diagnostics.csv").read_bytes() == before


def test_run_refuses_existing_output(tmp_path, config, capsys):
    out = tmp_path / "run"
    main(["run", "--config", config(0.0), "--out-dir", str(out)])
    assert main(["run", "--config", config(0.0), "--out-dir", str(out)]) == 5
    assert capsys.readouterr().err.startswith("error: io: ")


def test_lock_prevents_concurrent_runs(tmp_path, config, capsys):
    out = tmp_path / "run"
    out.mkdir()
    with open(out / ".lock", "a") as fh:
        fcntl.flock(fh, fcntl.LOCK_EX)
        assert main(["run", "--config", config(0.0), "--out-dir", str(out)]) == 6
    assert capsys.readouterr().err.startswith("error: locked: ")
    assert main(["run", "--config", config(0.0), "--out-dir", str(out)]) == 0


def test_resume_without_run(tmp_path, capsys):
    assert main(["resume", "--out-dir", str(tmp_path)]) != 0
    assert "error: io:" in capsys.readouterr().err


def _read_grid(path):
    return np.loadtxt(path, delimiter=",", skiprows=1)


def test_export_grid(tmp_path, config):
    snap = tmp_path / "s.tqgz"
    main(["init", "--config", config(), "--out", str(snap)])
    out = tmp_path / "q.csv"
    assert main(["export-grid", "--state", str(snap), "--field", "q", "--nlat", "6", "--nlon", "10", "--out", str(out)]) == 0
    assert out.read_text().startswith("theta,phi,value\n")
    table = _read_grid(out)
    assert table.shape == (60, 3)
    q = tio.read_snapshot(snap).q
    np.testing.assert_allclose(table[:, 2], evaluate_on_grid(q, 6, 10).ravel(), rtol=1e-15, atol=1e-15)
    assert table[0, 0] == pytest.approx(np.pi / 12) and table[1, 1] == pytest.approx(2 * np.pi / 10)

    filt = tmp_path / "qf.csv"
    main(["export-grid", "--state", str(snap), "--field", "q", "--filter-alpha", "0.015625",
          "--nlat", "6", "--nlon", "10", "--out", str(filt)])
    expected = evaluate_on_grid(helmholtz_filter(q, 1 / 64), 6, 10).ravel()
    np.testing.assert_allclose(_read_grid(filt)[:, 2], expected, rtol=1e-14, atol=1e-14)


def test_export_psi_and_h1(tmp_path, config):
    snap = tmp_path / "s.tqgz"
    main(["init", "--config", config(extra="bathymetry = gaussian_caps(90, 0, 0.5, 1)\n"), "--out", str(snap)])
    for field in ("psi", "h1", "b"):
        out = tmp_path / f"{field}.csv"
        assert main(["export-grid", "--state", str(snap), "--field", field, "--nlat", "8", "--nlon", "8", "--out", str(out)]) == 0
        vals = _read_grid(out)[:, 2].reshape(8, 8)
        assert np.all(np.isfinite(vals))
    h1 = _read_grid(tmp_path / "h1.csv")[:, 2].reshape(8, 8)
    np.testing.assert_allclose(h1, np.repeat(h1[:, :1], 8, axis=1), atol=1e-12)  # polar cap is zonal
    assert h1[0, 0] > h1[-1, 0]


def test_diagnose(tmp_path, config, capsys):
    snap = tmp_path / "s.tqgz"
    main(["init", "--config", config(), "--out", str(snap)])
    capsys.readouterr()
    assert main(["diagnose", "--state", str(snap), "--config", config()]) == 0
    out = dict(line.split("=") for line in capsys.readouterr().out.splitlines())
    assert set(out) == {"time", "hamiltonian"} | {f"cas_b_{k}" for k in range(1, 5)} | {f"cas_qb_{k}" for k in range(5)}
    assert float(out["time"]) == 0.0


def test_verify_subcommand(capsys):
    assert main(["verify", "--n", "8"]) == 0
    lines = capsys.readouterr().out.splitlines()
    assert all(line.startswith("PASS") for line in lines[:-1])


def test_error_lines_from_subprocess(tmp_path):
    bad = tmp_path / "bad.txt"
    bad.write_text("n = 8\n")
    res = subprocess.run([sys.executable, "-m", "tqg", "init", "--config", str(bad), "--out", str(tmp_path / "x")],
                         capture_output=True, text=True)
    assert res.returncode == 2
    assert res.stderr.strip().startswith("error: config: missing required keys")

    junk = tmp_path / "junk.tqgz"
    junk.write_bytes(b"TQGZ" + bytes(10))
    res = subprocess.run([sys.executable, "-m", "tqg", "export-grid", "--state", str(junk), "--field", "q",
                          "--nlat", "4", "--nlon", "8", "--out", "-"], capture_output=True, text=True)
    assert res.returncode == 3
    assert res.stderr.startswith("error: format: ")
