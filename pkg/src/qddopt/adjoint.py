"""Cost functionals, discrete adjoint and H1-Riesz gradient of the reduced cost.

The adjoint is that of the discretised state system: with ``R(u, C) = 0`` the
free-node residual and ``u`` the free unknowns, ``xi`` solves
``(dR/du)^T xi = dJ/du`` and the reduced derivative is

    dJ/dC = gamma * L (C - C_ref) - m * xi_V        (free nodes),

since ``C`` enters the residual only through ``+m C`` in the Poisson row.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .device import Device
from .discrete import edge_weights, grad_seminorm_sq, stiffness
from .errors import LinearSolverError, NonConvergenceError
from .state import SolverConfig, StateTriple, jacobian, solve_state


@dataclass(eq=False)
class CostConfig:
    kind: str = "current_tracking"
    gamma: float = 1.0
    I_d: float = 0.0
    n_d: np.ndarray | None = None
    C_ref: np.ndarray | None = None
    tracking_weight: float = 1.0

    def __post_init__(self):
        if self.kind not in ("current_tracking", "density_tracking"):
            raise ValueError(f"unknown cost kind {self.kind!r}")
        if not self.gamma > 0:
            raise ValueError("cost.gamma must be > 0")
        if not np.isfinite(self.I_d):
            raise ValueError("target current must be finite")
        if self.kind == "density_tracking":
            if self.n_d is None or not np.all(np.isfinite(self.n_d)):
                raise ValueError("density tracking needs a finite target density n_d")


@dataclass(eq=False)
class AdjointTriple:
    xi_rho: np.ndarray
    xi_V: np.ndarray
    xi_S: np.ndarray


def _c_ref(device: Device, cfg: CostConfig) -> np.ndarray:
    return device.C_ref if cfg.C_ref is None else cfg.C_ref


def output_current(device: Device, state: StateTriple) -> float:
    n = state.rho**2
    p, q, _ = device.mesh.edges
    w, S = device.output_mask, state.S
    return float(np.sum(edge_weights(device.mesh, n) * (S[p] - S[q]) * (w[p] - w[q])))


def penalty(device: Device, C: np.ndarray, cfg: CostConfig) -> float:
    return 0.5 * cfg.gamma * grad_seminorm_sq(C - _c_ref(device, cfg), device.mesh)


def tracking(device: Device, state: StateTriple, cfg: CostConfig) -> float:
    if cfg.kind == "current_tracking":
        return 0.5 * cfg.tracking_weight * (output_current(device, state) - cfg.I_d) ** 2
    n = state.rho**2
    return 0.5 * cfg.tracking_weight * float(np.sum(device.mass * (n - cfg.n_d) ** 2))


def cost_eval(device: Device, state: StateTriple, C: np.ndarray, cfg: CostConfig) -> float:
    return tracking(device, state, cfg) + penalty(device, C, cfg)


def _density_sensitivity(device: Device, state: StateTriple, cfg: CostConfig) -> tuple[np.ndarray, np.ndarray]:
    """Partial derivatives of the tracking term w.r.t. nodal density ``n`` and nodal ``S``."""
    n, S = state.rho**2, state.S
    if cfg.kind == "current_tracking":
        mesh = device.mesh
        p, q, kappa = mesh.edges
        w = device.output_mask
        dI_dS = stiffness(mesh, n) @ w
        h = 0.5 * kappa * (S[p] - S[q]) * (w[p] - w[q])
        dI_dn = np.bincount(p, h, mesh.n_nodes) + np.bincount(q, h, mesh.n_nodes)
        resid = cfg.tracking_weight * (output_current(device, state) - cfg.I_d)
        return resid * dI_dn, resid * dI_dS
    return cfg.tracking_weight * device.mass * (n - cfg.n_d), np.zeros_like(n)


def cost_state_gradient(device: Device, state: StateTriple, cfg: CostConfig) -> np.ndarray:
    """dJ/du over the free unknowns, ordered like :func:`qddopt.state.jacobian`."""
    f = device.free
    dJ_dn, dJ_dS = _density_sensitivity(device, state, cfg)
    n = state.rho**2
    if state.eps2 == 0.0:
        # n = exp(S - V - V_ext) on free nodes
        return np.concatenate([(-n * dJ_dn)[f], (dJ_dS + n * dJ_dn)[f]])
    return np.concatenate([(2.0 * state.rho * dJ_dn)[f], np.zeros(len(f)), dJ_dS[f]])


def solve_adjoint(device: Device, state: StateTriple, C: np.ndarray, cfg: CostConfig,
                  tol: float = 1e-8) -> AdjointTriple:
    if not state.residual <= tol:
        raise NonConvergenceError(f"adjoint needs a converged state (residual {state.residual:.2e})",
                                  state.residual)
    J = jacobian(device, C, state.eps2, state.rho, state.V, state.S)
    rhs = cost_state_gradient(device, state, cfg)
    N = device.mesh.n_nodes
    f = device.free
    nf = len(f)
    if not np.any(rhs):
        xi = np.zeros_like(rhs)
    else:
        try:
            xi = spla.splu(J.T.tocsc()).solve(rhs)
        except RuntimeError as exc:
            raise LinearSolverError(f"adjoint system is singular ({exc})") from exc
    blocks = []
    for k in range(len(rhs) // nf):
        full = np.zeros(N)
        full[f] = xi[k * nf : (k + 1) * nf]
        blocks.append(full)
    if state.eps2 == 0.0:
        return AdjointTriple(np.zeros(N), blocks[0], blocks[1])
    return AdjointTriple(*blocks)


def adjoint_residual(device: Device, state: StateTriple, C: np.ndarray, cfg: CostConfig,
                     adj: AdjointTriple) -> float:
    """Relative residual of ``(dR/du)^T xi = dJ/du`` for a given adjoint."""
    f = device.free
    J = jacobian(device, C, state.eps2, state.rho, state.V, state.S)
    parts = [adj.xi_V[f], adj.xi_S[f]] if state.eps2 == 0.0 else [adj.xi_rho[f], adj.xi_V[f], adj.xi_S[f]]
    xi = np.concatenate(parts)
    rhs = cost_state_gradient(device, state, cfg)
    r = J.T @ xi - rhs
    return float(np.linalg.norm(r) / max(np.linalg.norm(rhs), np.finfo(float).tiny))


def reduced_derivative(device: Device, xi_V: np.ndarray, C: np.ndarray, cfg: CostConfig) -> np.ndarray:
    """Nodal dual vector ``<J'(C), phi> = sum_i d_i phi_i`` for zero-trace ``phi``."""
    d = cfg.gamma * (device.laplacian @ (C - _c_ref(device, cfg))) - device.mass * xi_V
    d[device.mesh.dirichlet] = 0.0
    return d


def riesz_gradient(device: Device, xi_V: np.ndarray, C: np.ndarray, cfg: CostConfig) -> np.ndarray:
    """H1-seminorm Riesz representative: ``int grad g . grad phi = <J'(C), phi>``, ``g = 0`` on contacts."""
    return device.solve_laplace(reduced_derivative(device, xi_V, C, cfg))


@dataclass(eq=False)
class Gradient:
    """Reduced cost, its derivative and Riesz gradient at one control."""

    J: float
    dual: np.ndarray
    g: np.ndarray
    state: StateTriple
    adjoint: AdjointTriple
    current: float

    @property
    def slope(self) -> float:
        return float(self.dual @ self.g)


def evaluate_gradient(device: Device, C: np.ndarray, state: StateTriple, cfg: CostConfig) -> Gradient:
    adj = solve_adjoint(device, state, C, cfg, tol=max(state.residual, 1e-8))
    dual = reduced_derivative(device, adj.xi_V, C, cfg)
    g = device.solve_laplace(dual)
    return Gradient(cost_eval(device, state, C, cfg), dual, g, state, adj, output_current(device, state))


# ---------------------------------------------------------------------------
# finite-difference check


@dataclass
class GradientCheckRow:
    direction: int
    tau: float
    adjoint: float
    fd: float
    rel_error: float


@dataclass
class GradientCheckReport:
    rows: list[GradientCheckRow] = field(default_factory=list)

    def best(self) -> dict[int, float]:
        out: dict[int, float] = {}
        for r in self.rows:
            out[r.direction] = min(out.get(r.direction, np.inf), r.rel_error)
        return out

    @property
    def worst_best(self) -> float:
        return max(self.best().values())

    def to_text(self) -> str:
        lines = [f"{'dir':>4} {'tau':>8} {'adjoint':>24} {'finite-diff':>24} {'rel.err':>10}"]
        for r in self.rows:
            lines.append(f"{r.direction:>4d} {r.tau:>8.0e} {r.adjoint:>24.16e} {r.fd:>24.16e} {r.rel_error:>10.3e}")
        for k, v in self.best().items():
            lines.append(f"best[{k}] = {v:.3e}")
        return "\n".join(lines) + "\n"


def random_directions(device: Device, count: int, seed: int = 0, amplitude: float | None = None) -> list[np.ndarray]:
    """Smooth random zero-trace perturbations, scaled to max-norm ``amplitude``."""
    rng = np.random.default_rng(seed)
    amp = float(np.min(device.C_ref)) if amplitude is None else amplitude
    out = []
    for _ in range(count):
        r = rng.standard_normal(device.mesh.n_nodes)
        d = device.solve_laplace(device.mass * r)
        out.append(amp * d / np.max(np.abs(d)))
    return out


def fd_gradient_check(device: Device, C: np.ndarray, eps2: float, cfg: CostConfig, directions: int = 5,
                      taus=(1e-3, 1e-4, 1e-5), solver: SolverConfig | None = None, seed: int = 0,
                      state: StateTriple | None = None) -> GradientCheckReport:
    """Compare adjoint directional derivatives with central differences of the reduced cost."""
    solver = solver or SolverConfig(nonlinear_tol=1e-11)
    base = solve_state(device, C, eps2, solver, warm_start=state)
    grad = evaluate_gradient(device, C, base, cfg)
    report = GradientCheckReport()

    def Jhat(Cp):
        st = solve_state(device, Cp, eps2, solver, warm_start=base)
        return cost_eval(device, st, Cp, cfg)

    for k, d in enumerate(random_directions(device, directions, seed)):
        adj = float(grad.dual @ d)
        for tau in taus:
            fd = (Jhat(C + tau * d) - Jhat(C - tau * d)) / (2.0 * tau)
            err = abs(fd - adj) / max(abs(adj), abs(fd), np.finfo(float).tiny)
            report.rows.append(GradientCheckRow(k, tau, adj, fd, err))
    return report
