"""Semiclassical epsilon-ladder: optimise at eps_k^2 = eps^2 * 10^(-2n) and compare with the DD optimum."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .adjoint import output_current
from .config import RunConfig
from .device import Device, build_device
from .discrete import current_density_peak, inner_l2
from .errors import QDDError
from .optimize import OptimizationTrace, gradient_descent
from .state import StateTriple, solve_state

log = logging.getLogger(__name__)


@dataclass(eq=False)
class SweepRow:
    n: int | None  # None marks the DD baseline
    eps2: float
    J: float = math.nan
    iterations: int = 0
    reason: str = ""
    rel_C: float = math.nan
    rel_n: float = math.nan
    rel_S: float = math.nan
    cost_gap: float = math.nan
    rho_min: float = math.nan
    rho_max: float = math.nan
    current: float = math.nan
    peak: float = math.nan
    error: str = ""
    trace: OptimizationTrace | None = None

    @property
    def ok(self) -> bool:
        return not self.error


@dataclass(eq=False)
class SweepReport:
    device: Device
    I_ref: float
    rows: list[SweepRow] = field(default_factory=list)

    @property
    def baseline(self) -> SweepRow:
        return next(r for r in self.rows if r.n is None)

    @property
    def ladder(self) -> list[SweepRow]:
        return [r for r in self.rows if r.n is not None]


def rel_l2(a: np.ndarray, b: np.ndarray, device: Device) -> float:
    """``||a - b||_L2 / ||b||_L2`` with the lumped mass."""
    d = a - b
    denom = math.sqrt(inner_l2(b, b, device.mesh))
    return math.sqrt(inner_l2(d, d, device.mesh)) / denom if denom > 0 else math.sqrt(inner_l2(d, d, device.mesh))


def epsilon_ladder(eps2: float, n_max: int) -> list[float]:
    # the ladder scales eps by 10^-n, so eps^2 moves by 10^-2n
    return [eps2 * 10.0 ** (-2 * n) for n in range(n_max + 1)]


def _run_row(row: SweepRow, device: Device, cfg: RunConfig, cost, warm: StateTriple | None) -> QDDError | None:
    try:
        tr = gradient_descent(device, row.eps2, cfg.optimizer, cost, cfg.solver, warm_start=warm)
    except QDDError as exc:
        row.error = f"{type(exc).__name__}: {exc}"
        log.warning("sweep row eps2=%g failed: %s", row.eps2, row.error)
        return exc
    row.trace = tr
    row.J = tr.J
    row.iterations = tr.iterations
    row.reason = tr.reason
    row.rho_min = float(np.min(tr.state.rho))
    row.rho_max = float(np.max(tr.state.rho))
    row.current = output_current(device, tr.state)
    row.peak = current_density_peak(device.mesh, tr.state.n, tr.state.S)
    return None


def run_epsilon_sweep(cfg: RunConfig, device: Device | None = None) -> SweepReport:
    """DD baseline first, then the eps-ladder, each row warm-started from the previous optimum.

    The target current is fixed once from the DD reference state so that every
    row minimises the same functional up to the quantum term.
    """
    if device is None:
        p = cfg.physics
        device = build_device(cfg.device_geometry(), cfg.sweep.grid, cfg.sweep.grid, p.lam2, p.delta_c,
                              cfg.geometry.smoothing_length, p.v_ext or None)
    ref = solve_state(device, device.C_ref, 0.0, cfg.solver)
    I_ref = output_current(device, ref)
    cost = cfg.cost_config(I_ref)
    report = SweepReport(device, I_ref)

    base = SweepRow(None, 0.0)
    exc = _run_row(base, device, cfg, cost, ref)
    if exc is not None:
        raise exc
    report.rows.append(base)

    warm = base.trace.state
    for n, eps2 in enumerate(epsilon_ladder(cfg.physics.eps2, cfg.sweep.n_max)):
        row = SweepRow(n, eps2)
        if eps2 == 0.0:
            # a zero ladder entry is the baseline problem itself
            row = replace(base, n=n)
        else:
            _run_row(row, device, cfg, cost, warm if cfg.sweep.warm_start else None)
        report.rows.append(row)
        if row.ok and cfg.sweep.warm_start:
            warm = row.trace.state

    b = base.trace
    for row in report.rows:
        if not row.ok:
            continue
        t = row.trace
        row.rel_C = rel_l2(t.C, b.C, device)
        row.rel_n = rel_l2(t.state.n, b.state.n, device)
        row.rel_S = rel_l2(t.state.S, b.state.S, device)
        row.cost_gap = abs(t.J - b.J)
    return report

