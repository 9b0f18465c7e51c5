"""Sobolev-gradient descent with Armijo backtracking on the reduced cost."""
from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field

import numpy as np

from .adjoint import CostConfig, Gradient, cost_eval, evaluate_gradient
from .device import Device
from .discrete import norm_h1
from .errors import LineSearchError, LinearSolverError, NonConvergenceError, PositivityError
from .state import SolverConfig, StateTriple, solve_state

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class ArmijoConfig:
    c1: float = 1e-4
    beta: float = 0.5
    alpha0: float = 1.0
    growth: float = 2.0
    max_backtracks: int = 30
    tol: float = 1e-7
    max_iters: int = 100

    def __post_init__(self):
        if not 0.0 < self.c1 < 1.0:
            raise ValueError("optimizer.c1 must lie in (0, 1)")
        if not 0.0 < self.beta < 1.0:
            raise ValueError("optimizer.beta must lie in (0, 1)")
        if not self.alpha0 > 0:
            raise ValueError("optimizer.alpha0 must be > 0")
        if self.tol < 0 or self.max_iters < 0 or self.max_backtracks < 1:
            raise ValueError("optimizer tolerances and caps must be non-negative")


@dataclass
class IterationRecord:
    k: int
    J: float
    grad_norm: float
    alpha: float
    current: float
    seconds: float


@dataclass(eq=False)
class OptimizationTrace:
    records: list[IterationRecord] = field(default_factory=list)
    C: np.ndarray | None = None
    state: StateTriple | None = None
    reason: str = ""
    eps2: float = 0.0

    @property
    def J(self) -> float:
        return self.records[-1].J

    @property
    def iterations(self) -> int:
        return len(self.records) - 1


def _try_state(device, C, eps2, solver, warm):
    try:
        return solve_state(device, C, eps2, solver, warm_start=warm)
    except (NonConvergenceError, PositivityError, LinearSolverError, FloatingPointError) as exc:
        log.debug("forward solve failed at trial point: %s", exc)
        return None


def armijo_search(device: Device, C: np.ndarray, grad: Gradient, cfg: ArmijoConfig, cost: CostConfig,
                  solver: SolverConfig, eps2: float, alpha0: float | None = None):
    """Backtrack ``alpha = alpha0 * beta^m`` until ``J(C - alpha g) <= J0 - c1 alpha slope``.

    Returns ``(alpha, C_new, J_new, state_new)``.  A trial point where the
    forward solve fails counts as insufficient decrease.
    """
    slope = grad.slope
    if not slope > 0:
        raise ValueError("Armijo search needs a descent direction (slope must be > 0)")
    alpha = cfg.alpha0 if alpha0 is None else alpha0
    J0 = grad.J
    last = None
    for _ in range(cfg.max_backtracks + 1):
        C_new = C - alpha * grad.g
        st = _try_state(device, C_new, eps2, solver, grad.state)
        if st is not None:
            J_new = cost_eval(device, st, C_new, cost)
            last = (alpha, J_new)
            if J_new <= J0 - cfg.c1 * alpha * slope:
                return alpha, C_new, J_new, st
        alpha *= cfg.beta
    raise LineSearchError(
        f"no sufficient decrease after {cfg.max_backtracks} backtracks (J0={J0:.6e}, last trial={last})"
    )


def gradient_descent(device: Device, eps2: float, cfg: ArmijoConfig, cost: CostConfig,
                     solver: SolverConfig | None = None, C_init: np.ndarray | None = None,
                     warm_start: StateTriple | None = None) -> OptimizationTrace:
    """Gradient method with Armijo line search, starting from ``C_init`` (default ``C_ref``).

    Stops when ``||g||_H1 <= cfg.tol`` ("tolerance"), after ``cfg.max_iters``
    steps ("max_iters"), or when the line search fails ("line_search_failure").
    """
    solver = solver or SolverConfig()
    C = np.array(device.C_ref if C_init is None else C_init, dtype=float)
    t0 = time.perf_counter()
    state = solve_state(device, C, eps2, solver, warm_start=warm_start)
    trace = OptimizationTrace(eps2=eps2)
    alpha0 = cfg.alpha0
    k = 0
    while True:
        grad = evaluate_gradient(device, C, state, cost)
        gnorm = norm_h1(grad.g, device.mesh)
        rec = IterationRecord(k, grad.J, gnorm, 0.0, grad.current, time.perf_counter() - t0)
        trace.records.append(rec)
        log.info("k=%d J=%.10e |g|=%.3e I=%.6e", k, grad.J, gnorm, grad.current)
        if gnorm <= cfg.tol:
            trace.reason = "tolerance"
            break
        if k >= cfg.max_iters:
            trace.reason = "max_iters"
            break
        try:
            alpha, C, _, state = armijo_search(device, C, grad, cfg, cost, solver, eps2, alpha0)
        except LineSearchError as exc:
            log.warning("line search failed at k=%d: %s", k, exc)
            trace.reason = "line_search_failure"
            break
        rec.alpha = alpha
        alpha0 = alpha * cfg.growth
        k += 1
    trace.C = C
    trace.state = state
    return trace
