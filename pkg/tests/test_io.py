import io as pyio

import numpy as np
import pytest

from tqg import io as tio
from tqg.errors import ConfigError, FormatError
from tqg.model import Bathymetry, DiagnosticsRecord, random_field
from tqg.quantization import project, reconstruct
from tqg.sphere import SphereField

BASE = "n = 16\nrossby = 0.01\ngamma = 100\ndt = 0.01\nt_final = 1\nseed = 4\n"


def test_parse_minimal_config():
    cfg = tio.parse_config("# comment\n" + BASE + "\n")
    assert cfg.n == 16 and cfg.gamma == 100.0 and cfg.seed == 4
    assert cfg.fp_tol == 1e-13 and cfg.casimir_max_power == 4 and cfg.bathymetry.name == "zero"


def test_shipped_configs_accepted():
    a = tio.parse_config("n = 512\nrossby = 0.01\ngamma = 100\ndt = 0.0025\nt_final = 33\nseed = 1\n")
    assert a.n == 512 and a.t_final == 33 and a.init_lmax == 100
    b = tio.parse_config(
        "n = 512\nrossby = 0.01\ngamma = 1000\ndt = 0.0025\nt_final = 33\nseed = 1\n"
        "bathymetry = gaussian_caps(45, 0, 0.35, 1.0; -30, 120, 0.5, -0.8)  # two caps\n"
    )
    assert b.gamma == 1000 and b.bathymetry == Bathymetry("gaussian_caps", ((45, 0, 0.35, 1.0), (-30, 120, 0.5, -0.8)))


@pytest.mark.parametrize(
    "text",
    [
        BASE.replace("dt = 0.01", "dt = 0"),
        BASE.replace("seed = 4\n", ""),
        BASE + "colour = blue\n",
        BASE + "n = 8\n",
        BASE.replace("gamma = 100", "gamma = lots"),
        BASE + "bathymetry = gaussian_caps(1, 2, 3)\n",
        BASE + "bathymetry = volcano\n",
        BASE + "just some words\n",
    ],
)
def test_bad_configs(text):
    with pytest.raises(ConfigError):
        tio.parse_config(text)


def test_config_round_trip(tmp_path):
    cfg = tio.parse_config(BASE + "bathymetry = gaussian_caps(10, 20, 0.3, 1.5)\ninit_b = constant\ninit_b_value = 0.25\n")
    again = tio.parse_config(tio.format_config(cfg))
    assert again == cfg
    path = tmp_path / "c.txt"
    path.write_text(tio.format_config(cfg))
    assert tio.load_config(path) == cfg
    with pytest.raises(ConfigError):
        tio.load_config(tmp_path / "nope.txt")


def _snapshot(rng, n=6):
    return tio.Snapshot(
        n=n, time=1.25, rossby=0.01, gamma=100.0, coriolis_scale=1.0, seed=2**40 + 3,
        q=random_field(rng, n - 1, n - 1), b=random_field(rng, n - 1, n - 1), h1=SphereField.zeros(n - 1),
    )


def test_snapshot_round_trip_bit_exact(tmp_path, rng):
    snap = _snapshot(rng)
    path = tmp_path / "s.tqgz"
    tio.write_snapshot(path, snap)
    raw = path.read_bytes()
    assert raw[:4] == b"TQGZ" and len(raw) == 56 + 3 * 16 * 36
    back = tio.read_snapshot(path)
    assert tio.snapshot_bytes(back) == raw
    assert back.seed == 2**40 + 3 and back.time == 1.25
    assert np.array_equal(back.q.coeffs, snap.q.coeffs)


def test_snapshot_layout(rng):
    snap = _snapshot(rng, n=3)
    raw = tio.snapshot_bytes(snap)
    assert np.frombuffer(raw[4:16], "<u4").tolist() == [1, 3, 2]
    assert np.frombuffer(raw[16:48], "<f8").tolist() == [1.25, 0.01, 100.0, 1.0]
    assert np.frombuffer(raw[48:56], "<u8")[0] == 2**40 + 3
    q = np.frombuffer(raw[56 : 56 + 16 * 9], "<f8").reshape(9, 2)
    np.testing.assert_array_equal(q[:, 0] + 1j * q[:, 1], snap.q.coeffs)


def test_zero_snapshot(rng):
    z = SphereField.zeros(3)
    raw = tio.snapshot_bytes(tio.Snapshot(4, 0.0, 0.1, 0.0, 1.0, 0, z, z, z))
    assert not any(raw[56:])
    assert tio.parse_snapshot(raw).n == 4


def test_snapshot_projection_cross_check(basis, rng):
    snap = tio.parse_snapshot(tio.snapshot_bytes(_snapshot(rng, n=10)))
    b = basis(10)
    np.testing.assert_allclose(reconstruct(project(snap.q, b), b).coeffs, snap.q.coeffs, atol=1e-12)


def test_snapshot_errors(rng):
    raw = tio.snapshot_bytes(_snapshot(rng))
    with pytest.raises(FormatError):
        tio.parse_snapshot(b"XXXX" + raw[4:])
    with pytest.raises(FormatError):
        tio.parse_snapshot(raw[:4] + (2).to_bytes(4, "little") + raw[8:])
    with pytest.raises(FormatError):
        tio.parse_snapshot(raw[:-8])
    with pytest.raises(FormatError):
        tio.parse_snapshot(raw[:20])
    broken = bytearray(raw)
    broken[56 + 16 * 3 : 56 + 16 * 3 + 8] = np.float64(5.0).tobytes()  # c_{1,1} without its partner
    with pytest.raises(FormatError):
        tio.parse_snapshot(bytes(broken))


def test_read_missing_snapshot(tmp_path):
    with pytest.raises(FormatError):
        tio.read_snapshot(tmp_path / "missing.tqgz")


def test_field_file_id_checked(tmp_path, rng):
    path = tmp_path / "f.tqgf"
    tio.write_field_file(path, random_field(rng, 4, 4), field_id="b")
    with pytest.raises(ConfigError):
        tio.read_field_file(path)
    assert tio.read_field_file(path, field_id="b").lmax == 4


def _record(step, K=4):
    r = np.random.default_rng(step)
    return DiagnosticsRecord(step, step * 0.1, r.standard_normal() * 1e3, r.standard_normal(K), r.standard_normal(K + 1), 7, 3.3e-14)


def test_diagnostics_csv_round_trip(tmp_path):
    path = tmp_path / "d.csv"
    recs = [_record(k) for k in range(4)]
    with open(path, "w", newline="") as fh:
        w = tio.DiagnosticsWriter(fh, 4)
        for r in recs:
            w(r)
    lines = path.read_text().splitlines()
    assert lines[0].split(",") == tio.diagnostics_header(4)
    assert all(len(line.split(",")) == 5 + 4 + 5 for line in lines)
    assert lines[1].startswith("0,0,")
    back = tio.read_diagnostics(path)
    for a, b in zip(recs, back):
        assert a.step == b.step and a.time == b.time and a.hamiltonian == b.hamiltonian
        assert np.array_equal(a.casimirs_b, b.casimirs_b) and np.array_equal(a.casimirs_qb, b.casimirs_qb)
        assert a.fp_iterations == b.fp_iterations and a.fp_residual == b.fp_residual


def test_diagnostics_flush_cadence():
    class Counting(pyio.StringIO):
        flushes = 0

        def flush(self):
            self.flushes += 1

    s = Counting()
    w = tio.DiagnosticsWriter(s, 2, flush_every=3)
    start = s.flushes
    for k in range(6):
        w(_record(k, 2))
    assert s.flushes - start == 2
