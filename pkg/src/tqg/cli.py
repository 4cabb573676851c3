"""Command-line interface: ``tqg {init,run,resume,export-grid,diagnose,verify}``.

A run directory holds ``config.txt`` (the resolved configuration),
``diagnostics.csv`` and ``snapshots/snap_<step>.tqgz``. Failures are
reported on stderr as ``error: <category>: <detail>`` with a nonzero exit
code taken from the exception class.
"""

from __future__ import annotations

import argparse
import contextlib
import fcntl
import logging
import os
import re
import sys
from pathlib import Path

import numpy as np

from . import io as tio
from .errors import ConfigError, IoError, LockedError, StepFailure, TqgError
from .integrator import integrate, num_steps
from .model import (
    SimConfig,
    TqgState,
    assemble_static,
    casimirs,
    hamiltonian,
    helmholtz_filter,
    helmholtz_solve,
    random_initial_state,
)
from .quantization import build_basis, project, reconstruct
from .sphere import evaluate_on_grid, grid_angles

logger = logging.getLogger("tqg")

CONFIG_NAME = "config.txt"
DIAGNOSTICS_NAME = "diagnostics.csv"
SNAPSHOT_DIR = "snapshots"
LOCK_NAME = ".lock"
_SNAP_RE = re.compile(r"snap_(\d{8})\.tqgz$")


# -- helpers -----------------------------------------------------------------


def snapshot_name(step: int) -> str:
    return f"snap_{step:08d}.tqgz"


def make_snapshot(state: TqgState, static, config: SimConfig) -> tio.Snapshot:
    basis = static.basis
    lmax = basis.n - 1
    return tio.Snapshot(
        n=basis.n,
        time=state.time,
        rossby=config.rossby,
        gamma=config.gamma,
        coriolis_scale=config.coriolis_scale,
        seed=config.seed,
        q=reconstruct(state.Q, basis, lmax),
        b=reconstruct(state.B, basis, lmax),
        h1=reconstruct(static.H1, basis, lmax),
    )


def state_from_snapshot(snap: tio.Snapshot, basis) -> tuple[TqgState, np.ndarray]:
    """Return the state and the quantized bathymetry stored in ``snap``."""
    Q = project(snap.q, basis)
    B = project(snap.b, basis)
    return TqgState(snap.time, Q, B), project(snap.h1, basis)


def _check_snapshot_matches(snap: tio.Snapshot, config: SimConfig) -> None:
    if snap.n != config.n:
        raise ConfigError(f"snapshot has N={snap.n} but config has n={config.n}")
    for key in ("rossby", "gamma", "coriolis_scale"):
        a, b = getattr(snap, key), getattr(config, key)
        if a != b:
            logger.warning("snapshot %s=%r differs from config %r; using config", key, a, b)


@contextlib.contextmanager
def directory_lock(out_dir: Path):
    """Exclusive advisory lock on ``out_dir``; raises LockedError if held."""
    out_dir.mkdir(parents=True, exist_ok=True)
    fh = open(out_dir / LOCK_NAME, "a+")
    try:
        try:
            fcntl.flock(fh, fcntl.LOCK_EX | fcntl.LOCK_NB)
        except BlockingIOError as exc:
            raise LockedError(f"{out_dir} is in use by another run") from exc
        fh.seek(0)
        fh.truncate()
        fh.write(f"{os.getpid()}\n")
        fh.flush()
        yield
    finally:
        fh.close()


def latest_snapshot(out_dir: Path) -> tuple[int, Path] | None:
    best = None
    for p in (out_dir / SNAPSHOT_DIR).glob("snap_*.tqgz"):
        m = _SNAP_RE.search(p.name)
        if m and (best is None or int(m.group(1)) > best[0]):
            best = (int(m.group(1)), p)
    return best


def truncate_diagnostics(path: Path, K: int, last_step: int) -> float | None:
    """Drop rows after ``last_step`` (and any torn final line).

    Returns the time recorded in the step-0 row, if present.
    """
    ncols = len(tio.diagnostics_header(K))
    lines = path.read_text().splitlines(keepends=True)
    if not lines:
        raise IoError(f"{path} is empty")
    keep = [lines[0]]
    t0 = None
    for line in lines[1:]:
        cells = line.rstrip("\n").split(",")
        if not line.endswith("\n") or len(cells) != ncols:
            break
        step = int(cells[0])
        if step > last_step:
            break
        if step == 0:
            t0 = float(cells[1])
        keep.append(line)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text("".join(keep))
    os.replace(tmp, path)
    return t0


def _execute(config: SimConfig, static, state: TqgState, out_dir: Path, start_step: int, t0: float | None) -> TqgState:
    snap_dir = out_dir / SNAPSHOT_DIR
    snap_dir.mkdir(exist_ok=True)
    diag_path = out_dir / DIAGNOSTICS_NAME
    fresh = start_step == 0
    with open(diag_path, "w" if fresh else "a", newline="") as fh:
        writer = tio.DiagnosticsWriter(fh, config.casimir_max_power, write_header=fresh)

        def on_snapshot(k: int, s: TqgState) -> None:
            tio.write_snapshot(snap_dir / snapshot_name(k), make_snapshot(s, static, config))
            logger.info("snapshot step=%d t=%.6g", k, s.time)

        def on_diagnostics(rec) -> None:
            writer(rec)
            logger.debug("step=%d t=%.6g H=%.17g iters=%d", rec.step, rec.time, rec.hamiltonian, rec.fp_iterations)

        try:
            return integrate(
                state, static, config,
                on_diagnostics=on_diagnostics,
                on_snapshot=on_snapshot,
                start_step=start_step,
                emit_initial=fresh,
                t0=t0,
            )
        finally:
            writer.flush()


# -- subcommands -------------------------------------------------------------


def cmd_init(args) -> int:
    config = tio.load_config(args.config)
    basis = build_basis(config.n)
    static = assemble_static(config, basis)
    state = random_initial_state(config, basis)
    tio.write_snapshot(args.out, make_snapshot(state, static, config))
    return 0


def cmd_run(args) -> int:
    config = tio.load_config(args.config)
    out_dir = Path(args.out_dir)
    with directory_lock(out_dir):
        if (out_dir / DIAGNOSTICS_NAME).exists():
            raise IoError(f"{out_dir} already holds a run; use 'resume' or choose another directory")
        basis = build_basis(config.n)
        if args.state:
            snap = tio.read_snapshot(args.state)
            _check_snapshot_matches(snap, config)
            state, h1 = state_from_snapshot(snap, basis)
            static = assemble_static(config, basis, h1=h1)
        else:
            static = assemble_static(config, basis)
            state = random_initial_state(config, basis)
        (out_dir / CONFIG_NAME).write_text(tio.format_config(config))
        _execute(config, static, state, out_dir, 0, state.time)
    return 0


def cmd_resume(args) -> int:
    out_dir = Path(args.out_dir)
    if not (out_dir / CONFIG_NAME).exists():
        raise IoError(f"{out_dir} holds no run ({CONFIG_NAME} missing)")
    config = tio.load_config(out_dir / CONFIG_NAME)
    with directory_lock(out_dir):
        found = latest_snapshot(out_dir)
        if found is None:
            raise IoError(f"no snapshot to resume from in {out_dir / SNAPSHOT_DIR}")
        step0, path = found
        snap = tio.read_snapshot(path)
        _check_snapshot_matches(snap, config)
        t0 = truncate_diagnostics(out_dir / DIAGNOSTICS_NAME, config.casimir_max_power, step0)
        if t0 is None:
            t0 = snap.time - step0 * config.dt
        if step0 >= num_steps(t0, config.t_final, config.dt):
            logger.info("run already complete at step %d", step0)
            return 0
        basis = build_basis(config.n)
        state, h1 = state_from_snapshot(snap, basis)
        static = assemble_static(config, basis, h1=h1)
        logger.info("resuming from step %d (t=%.6g)", step0, snap.time)
        _execute(config, static, state, out_dir, step0, t0)
    return 0


def _snapshot_config(snap: tio.Snapshot) -> SimConfig:
    return SimConfig(
        n=snap.n, rossby=snap.rossby, gamma=snap.gamma, dt=1.0, t_final=0.0,
        seed=snap.seed, coriolis_scale=snap.coriolis_scale,
    )


def cmd_export_grid(args) -> int:
    snap = tio.read_snapshot(args.state)
    if args.field == "q":
        f = snap.q
    elif args.field == "b":
        f = snap.b
    elif args.field == "h1":
        f = snap.h1
    else:
        basis = build_basis(snap.n)
        state, h1 = state_from_snapshot(snap, basis)
        static = assemble_static(_snapshot_config(snap), basis, h1=h1)
        f = reconstruct(helmholtz_solve(state.Q, state.B, static), basis)
    if args.filter_alpha:
        f = helmholtz_filter(f, args.filter_alpha)
    values = evaluate_on_grid(f, args.nlat, args.nlon)
    theta, phi = grid_angles(args.nlat, args.nlon)
    T, P = np.meshgrid(theta, phi, indexing="ij")
    table = np.column_stack([T.ravel(), P.ravel(), values.ravel()])
    out = sys.stdout if args.out == "-" else open(args.out, "w")
    try:
        out.write("theta,phi,value\n")
        np.savetxt(out, table, delimiter=",", fmt="%.17g")
    finally:
        if out is not sys.stdout:
            out.close()
    return 0


def cmd_diagnose(args) -> int:
    config = tio.load_config(args.config)
    snap = tio.read_snapshot(args.state)
    _check_snapshot_matches(snap, config)
    basis = build_basis(config.n)
    state, h1 = state_from_snapshot(snap, basis)
    static = assemble_static(config, basis, h1=h1)
    cas_b, cas_qb = casimirs(state, config.casimir_max_power)
    print(f"time={state.time!r}")
    print(f"hamiltonian={hamiltonian(state, static)!r}")
    for k, v in enumerate(cas_b, 1):
        print(f"cas_b_{k}={float(v)!r}")
    for k, v in enumerate(cas_qb):
        print(f"cas_qb_{k}={float(v)!r}")
    return 0


def cmd_verify(args) -> int:
    from .verification import run_suite

    reports = run_suite(args.n)
    return 0 if all(r.passed for r in reports) else 1


# -- entry point -------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="tqg", description="Thermal quasi-geostrophic simulator on the sphere.")
    p.add_argument("-v", "--verbose", action="count", default=0, help="-v for progress, -vv for per-step logs")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("init", help="write a random initial snapshot")
    s.add_argument("--config", required=True)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_init)

    s = sub.add_parser("run", help="integrate and write snapshots and diagnostics")
    s.add_argument("--config", required=True)
    s.add_argument("--state", help="initial snapshot (default: random state from the seed)")
    s.add_argument("--out-dir", required=True)
    s.set_defaults(func=cmd_run)

    s = sub.add_parser("resume", help="continue a run from its latest snapshot")
    s.add_argument("--out-dir", required=True)
    s.set_defaults(func=cmd_resume)

    s = sub.add_parser("export-grid", help="evaluate a field on an equiangular grid (CSV)")
    s.add_argument("--state", required=True)
    s.add_argument("--field", required=True, choices=("q", "b", "psi", "h1"))
    s.add_argument("--filter-alpha", type=float, default=0.0)
    s.add_argument("--nlat", type=int, required=True)
    s.add_argument("--nlon", type=int, required=True)
    s.add_argument("--out", required=True, help="output CSV path, or - for stdout")
    s.set_defaults(func=cmd_export_grid)

    s = sub.add_parser("diagnose", help="print Hamiltonian and Casimirs of a snapshot")
    s.add_argument("--state", required=True)
    s.add_argument("--config", required=True)
    s.set_defaults(func=cmd_diagnose)

    s = sub.add_parser("verify", help="run the oracle suite")
    s.add_argument("--n", type=int, default=16)
    s.set_defaults(func=cmd_verify)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    level = {0: logging.WARNING, 1: logging.INFO}.get(args.verbose, logging.DEBUG)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        return args.func(args)
    except StepFailure as exc:
        print(f"error: {exc.category}: {exc} (residual={exc.residual:.3e})", file=sys.stderr)
        return exc.exit_code
    except TqgError as exc:
        print(f"error: {exc.category}: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"error: io: {exc}", file=sys.stderr)
        return IoError.exit_code
    except ValueError as exc:
        print(f"error: invalid-argument: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
