"""Configuration parsing, snapshot/field files and the diagnostics CSV."""

from __future__ import annotations

import csv
import os
import re
import struct
from dataclasses import dataclass, fields
from pathlib import Path

import numpy as np

from .errors import ConfigError, FormatError, InvalidFieldError
from .model import Bathymetry, DiagnosticsRecord, SimConfig
from .sphere import SphereField, num_coeffs

SNAPSHOT_MAGIC = b"TQGZ"
SNAPSHOT_VERSION = 1
_HEADER = struct.Struct("<4sIII4dQ")

FIELD_MAGIC = b"TQGF"
FIELD_VERSION = 1
_FIELD_HEADER = struct.Struct("<4sI4sI")

REQUIRED_KEYS = ("n", "dt", "t_final", "rossby", "gamma", "seed")

_INT_KEYS = {"n", "seed", "init_lmax", "fp_max_iter", "casimir_max_power", "diag_every", "snapshot_every"}
_FLOAT_KEYS = {"rossby", "gamma", "dt", "t_final", "coriolis_scale", "fp_tol", "init_b_value"}
_STR_KEYS = {"init_q", "init_b"}
_KNOWN_KEYS = _INT_KEYS | _FLOAT_KEYS | _STR_KEYS | {"bathymetry"}


# -- configuration -----------------------------------------------------------


def parse_bathymetry(text: str) -> Bathymetry:
    """``zero`` | ``gaussian_caps(lat, lon, width, amp; ...)`` | ``spectral_file(path)``."""
    text = text.strip()
    match = re.fullmatch(r"(\w+)\s*(?:\((.*)\))?", text, flags=re.S)
    if not match:
        raise ConfigError(f"malformed bathymetry {text!r}")
    name, args = match.group(1), (match.group(2) or "").strip()
    if name in ("zero", "none"):
        return Bathymetry("zero")
    if name == "spectral_file":
        if not args:
            raise ConfigError("spectral_file needs a path")
        return Bathymetry(name, (args,))
    if name == "gaussian_caps":
        caps = []
        for chunk in filter(None, (c.strip() for c in args.split(";"))):
            try:
                vals = tuple(float(v) for v in chunk.split(","))
            except ValueError as exc:
                raise ConfigError(f"bad gaussian cap {chunk!r}: {exc}") from exc
            if len(vals) != 4:
                raise ConfigError(f"gaussian cap needs lat,lon,width,amp; got {chunk!r}")
            caps.append(vals)
        if not caps:
            raise ConfigError("gaussian_caps needs at least one cap")
        return Bathymetry(name, tuple(caps))
    raise ConfigError(f"unknown bathymetry {name!r}")


def format_bathymetry(b: Bathymetry) -> str:
    if b.name == "gaussian_caps":
        return "gaussian_caps(" + "; ".join(",".join(repr(v) for v in cap) for cap in b.params) + ")"
    if b.name == "spectral_file":
        return f"spectral_file({b.params[0]})"
    return "zero"


def parse_config(text: str) -> SimConfig:
    """Parse flat ``key = value`` text with ``#`` comments into a validated config."""
    values: dict = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key = value, got {raw.strip()!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in _KNOWN_KEYS:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        if key in values:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        try:
            if key in _INT_KEYS:
                values[key] = int(value)
            elif key in _FLOAT_KEYS:
                values[key] = float(value)
            elif key == "bathymetry":
                values[key] = parse_bathymetry(value)
            else:
                values[key] = value
        except ValueError as exc:
            if isinstance(exc, ConfigError):
                raise
            raise ConfigError(f"line {lineno}: bad value for {key!r}: {value!r}") from exc
    missing = [k for k in REQUIRED_KEYS if k not in values]
    if missing:
        raise ConfigError(f"missing required keys: {', '.join(missing)}")
    return SimConfig(**values)


def format_config(config: SimConfig) -> str:
    lines = []
    for f in fields(SimConfig):
        v = getattr(config, f.name)
        if f.name == "bathymetry":
            v = format_bathymetry(v)
        elif isinstance(v, float):
            v = repr(v)
        lines.append(f"{f.name} = {v}")
    return "\n".join(lines) + "\n"


def load_config(path) -> SimConfig:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return parse_config(text)


# -- snapshots ---------------------------------------------------------------


@dataclass(eq=False)
class Snapshot:
    n: int
    time: float
    rossby: float
    gamma: float
    coriolis_scale: float
    seed: int
    q: SphereField
    b: SphereField
    h1: SphereField
    version: int = SNAPSHOT_VERSION

    @property
    def lmax(self) -> int:
        return self.n - 1


def snapshot_bytes(snap: Snapshot) -> bytes:
    lmax = snap.n - 1
    head = _HEADER.pack(
        SNAPSHOT_MAGIC, snap.version, snap.n, lmax,
        snap.time, snap.rossby, snap.gamma, snap.coriolis_scale, snap.seed,
    )
    blocks = []
    for fld in (snap.q, snap.b, snap.h1):
        if fld.lmax != lmax:
            raise InvalidFieldError(f"snapshot block has lmax={fld.lmax}, expected {lmax}")
        blocks.append(np.ascontiguousarray(fld.coeffs, dtype="<c16").tobytes())
    return head + b"".join(blocks)


def write_snapshot(path, snap: Snapshot) -> None:
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(snapshot_bytes(snap))
    os.replace(tmp, path)


def parse_snapshot(raw: bytes) -> Snapshot:
    if len(raw) < _HEADER.size:
        raise FormatError("truncated snapshot header")
    magic, version, n, lmax, t, ro, gamma, cs, seed = _HEADER.unpack_from(raw)
    if magic != SNAPSHOT_MAGIC:
        raise FormatError(f"bad snapshot magic {magic!r}")
    if version != SNAPSHOT_VERSION:
        raise FormatError(f"unsupported snapshot version {version}")
    if lmax != n - 1:
        raise FormatError(f"snapshot lmax={lmax} inconsistent with N={n}")
    k = num_coeffs(lmax)
    expected = _HEADER.size + 3 * 16 * k
    if len(raw) != expected:
        raise FormatError(f"snapshot size {len(raw)} bytes, expected {expected}")
    data = np.frombuffer(raw, dtype="<c16", offset=_HEADER.size).astype(np.complex128)
    blocks = [SphereField(lmax, data[i * k : (i + 1) * k].copy()) for i in range(3)]
    for name, blk in zip("q b h1".split(), blocks):
        try:
            blk.check_real(1e-10)
        except InvalidFieldError as exc:
            raise FormatError(f"snapshot block {name}: {exc}") from exc
    return Snapshot(n, t, ro, gamma, cs, seed, *blocks, version=version)


def read_snapshot(path) -> Snapshot:
    try:
        raw = Path(path).read_bytes()
    except OSError as exc:
        raise FormatError(f"cannot read snapshot {path}: {exc}") from exc
    return parse_snapshot(raw)


# -- single-field spectral files (bathymetry input) --------------------------


def write_field_file(path, f: SphereField, field_id: str = "h1") -> None:
    tag = field_id.encode("ascii")
    if len(tag) > 4:
        raise ValueError("field id longer than 4 bytes")
    head = _FIELD_HEADER.pack(FIELD_MAGIC, FIELD_VERSION, tag.ljust(4, b"\0"), f.lmax)
    Path(path).write_bytes(head + np.ascontiguousarray(f.coeffs, dtype="<c16").tobytes())


def read_field_file(path, field_id: str | None = "h1") -> SphereField:
    """Read a ``TQGF`` file: magic, version u32, 4-byte id, lmax u32, coefficients."""
    try:
        raw = Path(path).read_bytes()
    except OSError as exc:
        raise ConfigError(f"cannot read spectral file {path}: {exc}") from exc
    if len(raw) < _FIELD_HEADER.size:
        raise ConfigError(f"malformed spectral file {path}: truncated header")
    magic, version, tag, lmax = _FIELD_HEADER.unpack_from(raw)
    if magic != FIELD_MAGIC or version != FIELD_VERSION:
        raise ConfigError(f"malformed spectral file {path}: bad magic/version")
    tag = tag.rstrip(b"\0").decode("ascii", "replace")
    if field_id is not None and tag != field_id:
        raise ConfigError(f"spectral file {path} holds field {tag!r}, expected {field_id!r}")
    k = num_coeffs(lmax)
    if len(raw) != _FIELD_HEADER.size + 16 * k:
        raise ConfigError(f"malformed spectral file {path}: wrong length for lmax={lmax}")
    coeffs = np.frombuffer(raw, dtype="<c16", offset=_FIELD_HEADER.size).astype(np.complex128)
    f = SphereField(lmax, coeffs.copy())
    try:
        f.check_real()
    except InvalidFieldError as exc:
        raise ConfigError(f"malformed spectral file {path}: {exc}") from exc
    return f


# -- diagnostics -------------------------------------------------------------


def diagnostics_header(K: int) -> list[str]:
    return (
        ["step", "time", "hamiltonian"]
        + [f"cas_b_{k}" for k in range(1, K + 1)]
        + [f"cas_qb_{k}" for k in range(K + 1)]
        + ["fp_iters", "fp_residual"]
    )


def _fmt(x: float) -> str:
    return format(float(x), ".17g")


def diagnostics_row(rec: DiagnosticsRecord) -> list[str]:
    return (
        [str(rec.step), _fmt(rec.time), _fmt(rec.hamiltonian)]
        + [_fmt(v) for v in rec.casimirs_b]
        + [_fmt(v) for v in rec.casimirs_qb]
        + [str(rec.fp_iterations), _fmt(rec.fp_residual)]
    )


class DiagnosticsWriter:
    """Append rows to a diagnostics CSV, flushing every ``flush_every`` rows."""

    def __init__(self, stream, K: int, write_header: bool = True, flush_every: int = 1):
        self.stream = stream
        self.K = K
        self.flush_every = flush_every
        self._pending = 0
        self._writer = csv.writer(stream, lineterminator="\n")
        if write_header:
            self._writer.writerow(diagnostics_header(K))
            stream.flush()

    def __call__(self, rec: DiagnosticsRecord) -> None:
        append_diagnostics(self._writer, rec)
        self._pending += 1
        if self._pending >= self.flush_every:
            self.flush()

    def flush(self) -> None:
        self.stream.flush()
        self._pending = 0


def append_diagnostics(writer, rec: DiagnosticsRecord) -> None:
    writer.writerow(diagnostics_row(rec))


def read_diagnostics(path) -> list[DiagnosticsRecord]:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        K = sum(1 for h in header if h.startswith("cas_b_"))
        out = []
        for row in reader:
            vals = row[3 : 3 + K]
            qb = row[3 + K : 4 + 2 * K]
            out.append(
                DiagnosticsRecord(
                    step=int(row[0]),
                    time=float(row[1]),
                    hamiltonian=float(row[2]),
                    casimirs_b=np.array([float(v) for v in vals]),
                    casimirs_qb=np.array([float(v) for v in qb]),
                    fp_iterations=int(row[4 + 2 * K]),
                    fp_residual=float(row[5 + 2 * K]),
                )
            )
    return out
