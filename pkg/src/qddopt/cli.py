"""Command-line entry point ``qdd``."""
from __future__ import annotations

import argparse
import logging
import sys

from .adjoint import fd_gradient_check, output_current
from .config import RunConfig, parse_config, with_overrides
from .device import Device, build_device
from .errors import (ConfigError, LinearSolverError, LineSearchError, NonConvergenceError, OutputError,
                     PositivityError)
from .optimize import gradient_descent
from .report import emit_results
from .state import solve_state
from .sweep import run_epsilon_sweep

log = logging.getLogger("qddopt")

EXIT_OK, EXIT_CHECK_FAILED, EXIT_CONFIG, EXIT_SOLVER, EXIT_LINE_SEARCH, EXIT_OUTPUT = 0, 1, 2, 3, 4, 5
GRADCHECK_TOL = 1e-4


def _device(cfg: RunConfig, nx: int, ny: int) -> Device:
    p = cfg.physics
    return build_device(cfg.device_geometry(), nx, ny, p.lam2, p.delta_c, cfg.geometry.smoothing_length,
                        p.v_ext or None)


def cmd_solve(cfg: RunConfig) -> int:
    dev = _device(cfg, cfg.geometry.nx, cfg.geometry.ny)
    st = solve_state(dev, dev.C_ref, cfg.physics.eps2, cfg.solver)
    out = emit_results(st, cfg.output.directory, device=dev, cfg=cfg)
    print(f"solved eps2={cfg.physics.eps2:g}: residual {st.residual:.2e}, drain current "
          f"{output_current(dev, st):.6e}; results in {out}")
    return EXIT_OK


def cmd_optimize(cfg: RunConfig) -> int:
    dev = _device(cfg, cfg.geometry.nx, cfg.geometry.ny)
    eps2 = cfg.physics.eps2
    ref = solve_state(dev, dev.C_ref, eps2, cfg.solver)
    cost = cfg.cost_config(output_current(dev, ref))
    trace = gradient_descent(dev, eps2, cfg.optimizer, cost, cfg.solver, warm_start=ref)
    out = emit_results(trace, cfg.output.directory, device=dev, reference=ref, cfg=cfg)
    print(f"optimize: {trace.reason} after {trace.iterations} iterations, J* = {trace.J:.10e}; results in {out}")
    return EXIT_LINE_SEARCH if trace.reason == "line_search_failure" else EXIT_OK


def cmd_sweep(cfg: RunConfig) -> int:
    report = run_epsilon_sweep(cfg)
    out = emit_results(report, cfg.output.directory, cfg=cfg)
    failed = [r for r in report.rows if not r.ok]
    print(f"sweep: {len(report.rows)} rows, {len(failed)} failed; results in {out}")
    if any("LineSearch" in r.error for r in failed):
        return EXIT_LINE_SEARCH
    return EXIT_SOLVER if failed else EXIT_OK


def cmd_gradcheck(cfg: RunConfig) -> int:
    g = cfg.gradcheck
    dev = _device(cfg, g.grid, g.grid)
    eps2 = cfg.physics.eps2
    ref = solve_state(dev, dev.C_ref, eps2, cfg.solver)
    cost = cfg.cost_config(output_current(dev, ref))
    report = fd_gradient_check(dev, dev.C_ref, eps2, cost, directions=g.directions, seed=g.seed, state=ref)
    out = emit_results(report, cfg.output.directory, cfg=cfg)
    print(report.to_text(), end="")
    print(f"results in {out}")
    return EXIT_OK if report.worst_best <= GRADCHECK_TOL else EXIT_CHECK_FAILED


COMMANDS = {"solve": cmd_solve, "optimize": cmd_optimize, "sweep": cmd_sweep, "gradcheck": cmd_gradcheck}


def build_parser() -> argparse.ArgumentParser:
    defaults = "\n".join("  " + line for line in RunConfig().echo())
    parser = argparse.ArgumentParser(
        prog="qdd",
        description="Forward solves, doping optimisation and eps-sweeps for the QDD/DD MESFET model.",
        epilog=f"exit codes: 0 ok, 1 gradient check above {GRADCHECK_TOL:g}, 2 config error, "
               f"3 solver nonconvergence, 4 line-search failure, 5 output error\n\nconfig defaults:\n{defaults}",
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    sub = parser.add_subparsers(dest="command", required=True)
    helps = {
        "solve": "single forward solve at the reference doping",
        "optimize": "gradient descent with Armijo line search",
        "sweep": "semiclassical eps-ladder against the DD optimum",
        "gradcheck": "compare adjoint and finite-difference directional derivatives",
    }
    for name, text in helps.items():
        p = sub.add_parser(name, help=text, description=text)
        p.add_argument("--config", help="sectioned config file (defaults used when omitted)")
        p.add_argument("--out", help="output directory (overrides output.directory)")
        p.add_argument("--grid", type=int, help="grid size N for an N x N mesh (overrides geometry.nx/ny and sweep.grid)")
        p.add_argument("--epsilon2", type=float, help="scaled Planck constant squared (overrides physics.eps2)")
        p.add_argument("-v", "--verbose", action="store_true", help="log solver progress")
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = parse_config(args.config) if args.config else RunConfig()
        cfg = with_overrides(cfg, args.grid, args.epsilon2, args.out)
        log.info("configuration:\n%s", "\n".join(cfg.echo()))
        return COMMANDS[args.command](cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (NonConvergenceError, PositivityError, LinearSolverError) as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    except LineSearchError as exc:
        print(f"line-search failure: {exc}", file=sys.stderr)
        return EXIT_LINE_SEARCH
    except OutputError as exc:
        print(f"output error: {exc}", file=sys.stderr)
        return EXIT_OUTPUT


if __name__ == "__main__":
    sys.exit(main())
