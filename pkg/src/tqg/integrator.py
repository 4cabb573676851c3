"""Casimir-preserving midpoint scheme for the semidirect-product flow.

For step size h the midpoint values (Qt, Bt) solve

    B_n = Bt - h/2 [Bt, P] - h^2/4 P Bt P
    Q_n = Qt - h/2 [Qt, P] - h/2 [Bt, J] - h^2/4 (P Qt P + J Bt P + P Bt J)

and the update is ``B_{n+1} = B_n + h [Bt, P]``,
``Q_{n+1} = Q_n + h ([Qt, P] + [Bt, J])``. Here P and J are the stream and
source matrices of the midpoint, divided by hbar so that plain commutators
reproduce the scaled bracket. ``B_n`` and ``B_{n+1}`` are then conjugate
through the Cayley transform of ``h P / 2``, which is what keeps
``tr f(B)`` and ``tr Q g(B)`` fixed.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .errors import StepFailure
from .model import (
    DiagnosticsRecord,
    SimConfig,
    StaticData,
    TqgState,
    casimirs,
    hamiltonian,
    helmholtz_solve,
    source_current,
)

logger = logging.getLogger(__name__)

MAX_HALVINGS = 3


@dataclass
class StepReport:
    iterations: int
    residual: float
    converged: bool


def _effective_fields(Qt, Bt, static):
    P = helmholtz_solve(Qt, Bt, static)
    J = source_current(P, static)
    ih = 1.0 / static.basis.hbar
    return P * ih, J * ih


def _fixed_point(Qn, Bn, static, h, fp_tol, fp_max_iter):
    Qt, Bt = Qn, Bn
    a, a2 = h / 2, h * h / 4
    residual = math.inf
    for it in range(1, fp_max_iter + 1):
        P, J = _effective_fields(Qt, Bt, static)
        PB = P @ Bt
        Bnew = Bn + a * (Bt @ P - PB) + a2 * (PB @ P)
        PB = P @ Bnew
        JB = J @ Bnew
        PQ = P @ Qt
        Qnew = (
            Qn
            + a * (Qt @ P - PQ + Bnew @ J - JB)
            + a2 * (PQ @ P + JB @ P + PB @ J)
        )
        diff = math.hypot(np.linalg.norm(Bnew - Bt), np.linalg.norm(Qnew - Qt))
        size = math.hypot(np.linalg.norm(Bnew), np.linalg.norm(Qnew))
        residual = diff / size if size > 0 else diff
        Qt, Bt = Qnew, Bnew
        if residual <= fp_tol:
            return Qt, Bt, it, residual
        if not math.isfinite(residual):
            raise StepFailure(f"fixed-point iteration diverged at sweep {it}", residual=residual, iterations=it)
    raise StepFailure(
        f"fixed-point iteration did not converge in {fp_max_iter} sweeps "
        f"(residual {residual:.3e} > {fp_tol:.1e})",
        residual=residual,
        iterations=fp_max_iter,
    )


def step(state: TqgState, static: StaticData, h: float, fp_tol: float = 1e-13, fp_max_iter: int = 100):
    """Advance one step of size ``h``; returns ``(new_state, StepReport)``.

    The residual is the Frobenius norm of the change of the concatenated
    midpoint ``(Bt, Qt)`` over one sweep, relative to its norm. Raises
    :class:`StepFailure` when ``fp_max_iter`` sweeps do not reach ``fp_tol``
    or the iteration blows up.
    """
    Qn, Bn = state.Q, state.B
    with np.errstate(over="ignore", invalid="ignore"):
        Qt, Bt, it, residual = _fixed_point(Qn, Bn, static, h, fp_tol, fp_max_iter)
    P, J = _effective_fields(Qt, Bt, static)
    B1 = Bn + h * (Bt @ P - P @ Bt)
    Q1 = Qn + h * (Qt @ P - P @ Qt + Bt @ J - J @ Bt)
    return TqgState(state.time + h, Q1, B1), StepReport(it, residual, True)


def step_with_retry(state, static, h, fp_tol, fp_max_iter, max_halvings: int = MAX_HALVINGS):
    """Take a step of size ``h``, splitting it into 2^k substeps on failure.

    The reported iteration count is summed over substeps and the residual
    is the worst one.
    """
    for k in range(max_halvings + 1):
        try:
            s, iters, res = state, 0, 0.0
            sub = h / 2**k
            for _ in range(2**k):
                s, rep = step(s, static, sub, fp_tol, fp_max_iter)
                iters += rep.iterations
                res = max(res, rep.residual)
            if k:
                logger.warning("step at t=%.6g needed %d halvings", state.time, k)
            s.time = state.time + h
            return s, StepReport(iters, res, True)
        except StepFailure as exc:
            last = exc
            logger.warning("step failure at t=%.6g with h=%.3g: %s", state.time, sub, exc)
    raise last


def diagnostics(step_index: int, state: TqgState, static: StaticData, K: int, report: StepReport | None = None) -> DiagnosticsRecord:
    cas_b, cas_qb = casimirs(state, K)
    return DiagnosticsRecord(
        step=step_index,
        time=state.time,
        hamiltonian=hamiltonian(state, static),
        casimirs_b=cas_b,
        casimirs_qb=cas_qb,
        fp_iterations=report.iterations if report else 0,
        fp_residual=report.residual if report else 0.0,
    )


def num_steps(t_start: float, t_final: float, dt: float) -> int:
    """Steps of size ``dt`` needed to reach ``t_final``."""
    if t_final <= t_start:
        return 0
    return max(0, math.ceil((t_final - t_start) / dt - 1e-9))


def integrate(
    state: TqgState,
    static: StaticData,
    config: SimConfig,
    on_diagnostics: Callable[[DiagnosticsRecord], None] | None = None,
    on_snapshot: Callable[[int, TqgState], None] | None = None,
    start_step: int = 0,
    emit_initial: bool = True,
    t0: float | None = None,
) -> TqgState:
    """Integrate with fixed step ``config.dt`` until ``t_final``.

    Diagnostics are emitted at step indices divisible by ``diag_every`` and at
    the last step; snapshots likewise with ``snapshot_every`` (0 means first
    and last only). Step indices count from ``start_step``, and times are
    recomputed as ``t0 + k dt`` so that restarts land on identical values;
    pass the original ``t0`` when restarting to avoid rounding in its
    reconstruction.
    """
    dt = config.dt
    if t0 is None:
        t0 = state.time - start_step * dt
    total = num_steps(t0, config.t_final, dt)
    K = config.casimir_max_power
    if emit_initial:
        if on_diagnostics:
            on_diagnostics(diagnostics(start_step, state, static, K))
        if on_snapshot:
            on_snapshot(start_step, state)
    for k in range(start_step + 1, total + 1):
        state, report = step_with_retry(state, static, dt, config.fp_tol, config.fp_max_iter)
        state.time = t0 + k * dt
        last = k == total
        if on_diagnostics and (k % config.diag_every == 0 or last):
            on_diagnostics(diagnostics(k, state, static, K, report))
        if on_snapshot and (last or (config.snapshot_every and k % config.snapshot_every == 0)):
            on_snapshot(k, state)
    return state
