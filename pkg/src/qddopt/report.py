"""Deterministic result files: field CSVs, iteration trace, sweep table and a key-value summary."""
from __future__ import annotations

import csv
from pathlib import Path

import numpy as np

from .adjoint import GradientCheckReport
from .config import RunConfig
from .device import Device
from .discrete import contact_currents, current_density_peak, write_field_csv
from .errors import OutputError
from .optimize import OptimizationTrace
from .state import StateTriple
from .sweep import SweepReport

TRACE_COLUMNS = ("k", "J", "grad_norm", "alpha", "current")
SWEEP_COLUMNS = ("n", "eps2", "J", "iterations", "reason", "rel_C", "rel_n", "rel_S", "cost_gap",
                 "rho_min", "rho_max", "current", "peak_current_density", "error")


def _fmt(v) -> str:
    if isinstance(v, (float, np.floating)):
        return format(float(v), ".17g")
    return str(v)


def _prepare(out_dir: str | Path) -> Path:
    out = Path(out_dir)
    try:
        (out / "fields").mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OutputError(f"cannot create output directory {out}: {exc}") from exc
    return out


def _write_text(path: Path, text: str) -> None:
    try:
        path.write_text(text)
    except OSError as exc:
        raise OutputError(f"cannot write {path}: {exc}") from exc


def _write_rows(path: Path, header, rows) -> None:
    try:
        with path.open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(header)
            for r in rows:
                w.writerow([_fmt(v) for v in r])
    except OSError as exc:
        raise OutputError(f"cannot write {path}: {exc}") from exc


def write_state_fields(out: Path, device: Device, state: StateTriple, C: np.ndarray, prefix: str = "") -> None:
    mesh = device.mesh
    for name, values in (("C", C), ("rho", state.rho), ("n", state.n), ("V", state.V), ("S", state.S)):
        path = out / "fields" / f"{prefix}{name}.csv"
        try:
            write_field_csv(path, mesh, values)
        except OSError as exc:
            raise OutputError(f"cannot write {path}: {exc}") from exc


def state_summary(device: Device, state: StateTriple) -> list[tuple[str, object]]:
    cur = contact_currents(device.mesh, state.n, state.S)
    lines = [
        ("eps2", state.eps2),
        ("residual", state.residual),
        ("solver_iterations", state.iterations),
        ("peak_current_density", current_density_peak(device.mesh, state.n, state.S)),
    ]
    lines += [(f"current_{k}", v) for k, v in sorted(cur.items())]
    lines += [("rho_min", float(np.min(state.rho))), ("rho_max", float(np.max(state.rho)))]
    return lines


def _summary(path: Path, items: list[tuple[str, object]], cfg: RunConfig | None) -> None:
    lines = [f"{k}: {_fmt(v)}" for k, v in items]
    if cfg is not None:
        lines.append(f"config: {cfg.source}")
        lines += [f"config.{line}" for line in cfg.echo()]
    _write_text(path, "\n".join(lines) + "\n")


def trace_rows(trace: OptimizationTrace, timing: bool):
    for r in trace.records:
        row = [r.k, r.J, r.grad_norm, r.alpha, r.current]
        yield row + [r.seconds] if timing else row


def emit_state(out_dir, device: Device, state: StateTriple, C: np.ndarray, cfg: RunConfig | None = None) -> Path:
    out = _prepare(out_dir)
    write_state_fields(out, device, state, C)
    _summary(out / "summary.txt", state_summary(device, state), cfg)
    return out


def emit_trace(out_dir, device: Device, trace: OptimizationTrace, reference: StateTriple,
               cfg: RunConfig | None = None) -> Path:
    out = _prepare(out_dir)
    timing = cfg is not None and cfg.output.timing
    header = TRACE_COLUMNS + (("seconds",) if timing else ())
    _write_rows(out / "trace.csv", header, trace_rows(trace, timing))
    write_state_fields(out, device, trace.state, trace.C)
    write_state_fields(out, device, reference, device.C_ref, prefix="ref_")
    items = [
        ("J_opt", trace.J),
        ("iterations", trace.iterations),
        ("stop_reason", trace.reason),
        ("current_ref", trace.records[0].current),
        ("current_opt", trace.records[-1].current),
        ("peak_current_density_ref", current_density_peak(device.mesh, reference.n, reference.S)),
    ]
    items += [(k if k != "peak_current_density" else "peak_current_density_opt", v)
              for k, v in state_summary(device, trace.state)]
    _summary(out / "summary.txt", items, cfg)
    return out


def emit_sweep(out_dir, report: SweepReport, cfg: RunConfig | None = None) -> Path:
    out = _prepare(out_dir)
    rows = []
    for r in report.rows:
        rows.append(["dd" if r.n is None else r.n, r.eps2, r.J, r.iterations, r.reason, r.rel_C, r.rel_n,
                     r.rel_S, r.cost_gap, r.rho_min, r.rho_max, r.current, r.peak, r.error])
    _write_rows(out / "sweep.csv", SWEEP_COLUMNS, rows)
    for r in report.rows:
        if r.ok:
            tag = "dd" if r.n is None else f"n{r.n}"
            write_state_fields(out, report.device, r.trace.state, r.trace.C, prefix=f"{tag}_")
    base = report.baseline
    items = [
        ("rows", len(report.rows)),
        ("failed_rows", sum(not r.ok for r in report.rows)),
        ("current_ref", report.I_ref),
        ("J_opt_dd", base.J),
        ("iterations_dd", base.iterations),
        ("peak_current_density_dd", base.peak),
        ("current_dd", base.current),
    ]
    _summary(out / "summary.txt", items, cfg)
    return out


def emit_gradcheck(out_dir, report: GradientCheckReport, cfg: RunConfig | None = None) -> Path:
    out = _prepare(out_dir)
    _write_rows(out / "gradcheck.csv", ("direction", "tau", "adjoint", "finite_difference", "rel_error"),
                [[r.direction, r.tau, r.adjoint, r.fd, r.rel_error] for r in report.rows])
    items = [(f"best_rel_error_{k}", v) for k, v in report.best().items()]
    items.append(("worst_best_rel_error", report.worst_best))
    _summary(out / "summary.txt", items, cfg)
    return out


def emit_results(result, out_dir, device: Device | None = None, reference: StateTriple | None = None,
                 C: np.ndarray | None = None, cfg: RunConfig | None = None) -> Path:
    """Dispatch on the result type and write its file set into ``out_dir``."""
    if isinstance(result, SweepReport):
        return emit_sweep(out_dir, result, cfg)
    if isinstance(result, GradientCheckReport):
        return emit_gradcheck(out_dir, result, cfg)
    if device is None:
        raise ValueError("emitting a state or trace needs the device")
    if isinstance(result, OptimizationTrace):
        if reference is None:
            raise ValueError("emitting a trace needs the reference state")
        return emit_trace(out_dir, device, result, reference, cfg)
    if isinstance(result, StateTriple):
        return emit_state(out_dir, device, result, device.C_ref if C is None else C, cfg)
    raise TypeError(f"cannot emit {type(result).__name__}")
