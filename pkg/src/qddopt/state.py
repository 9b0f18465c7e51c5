"""Stationary quantum drift-diffusion state solver (and its classical eps = 0 limit).

Discrete equations on free (interior + Neumann) nodes, with ``L`` the unit
stiffness matrix, ``m`` the lumped mass and ``A(w)`` the weighted stiffness:

    R_rho = eps2 L rho + m rho (log rho^2 + V + V_ext - S)
    R_V   = lam2 L V - m (rho^2 - C)
    R_S   = A(rho^2) S

For ``eps2 == 0`` the density is eliminated through the Boltzmann relation
``rho^2 = exp(S - V - V_ext)`` on free nodes; contact nodes keep ``rho_D``.
"""
from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, replace

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .device import Device
from .discrete import assemble_weighted_laplacian, solve_linear, stiffness, weight_derivative
from .errors import LinearSolverError, NonConvergenceError, PositivityError

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class EnthalpyModel:
    """``h(t) = log t`` below the cap ``K``; the cap is only monitored."""

    kind: str = "log"
    cap: float = 1e3

    def h(self, t):
        return np.log(t)

    def H(self, t):
        # H(t) = int_1^t log s ds
        return t * np.log(t) - t + 1.0

    def check(self, t: np.ndarray) -> None:
        if np.max(t) >= self.cap:
            warnings.warn(
                f"density {np.max(t):.3g} reached the enthalpy cap K={self.cap:g}; "
                "the logarithmic enthalpy is outside its low-density regime",
                RuntimeWarning,
                stacklevel=3,
            )


@dataclass(frozen=True)
class SolverConfig:
    nonlinear_tol: float = 1e-8
    max_gummel: int = 500
    damping: float = 1.0
    min_damping: float = 1.0 / 16.0
    newton_tol: float = 1e-10
    max_newton: int = 80
    newton_switch: float = 1e-3
    rho_floor: float = 1e-10
    enthalpy: EnthalpyModel = EnthalpyModel()

    def __post_init__(self):
        if self.nonlinear_tol <= 0 or self.newton_tol <= 0 or self.newton_switch <= 0:
            raise ValueError("solver tolerances must be positive")
        if not 0.0 < self.damping <= 1.0:
            raise ValueError("damping must lie in (0, 1]")
        if self.max_gummel < 1 or self.max_newton < 1:
            raise ValueError("iteration caps must be at least 1")


@dataclass(eq=False)
class StateTriple:
    rho: np.ndarray
    V: np.ndarray
    S: np.ndarray
    eps2: float
    residual: float
    iterations: int
    newton_iterations: int = 0

    @property
    def n(self) -> np.ndarray:
        return self.rho**2

    def copy(self) -> "StateTriple":
        return replace(self, rho=self.rho.copy(), V=self.V.copy(), S=self.S.copy())


# ---------------------------------------------------------------------------
# residuals and Jacobians


def boltzmann_density(device: Device, V: np.ndarray, S: np.ndarray) -> np.ndarray:
    """Classical electron density: Boltzmann on free nodes, ``rho_D^2`` on contacts."""
    d = device.mesh.dirichlet
    expo = np.where(d, 0.0, S - V - device.v_ext)
    return np.where(d, device.bc.rho_D**2, np.exp(expo))


def residuals(device: Device, C: np.ndarray, eps2: float, rho, V, S) -> tuple[np.ndarray, ...]:
    """Discrete residuals on all nodes (entries on contact nodes are zero).

    Returns ``(R_rho, R_V, R_S)``; for ``eps2 == 0`` only ``(R_V, R_S)``.
    """
    m, L, d = device.mass, device.laplacian, device.mesh.dirichlet
    if eps2 == 0.0:
        n = boltzmann_density(device, V, S)
        RV = device.lam2 * (L @ V) - m * (n - C)
        RS = stiffness(device.mesh, n) @ S
        RV[d] = 0.0
        RS[d] = 0.0
        return RV, RS
    n = rho**2
    Rr = eps2 * (L @ rho) + m * rho * (np.log(n) + V + device.v_ext - S)
    RV = device.lam2 * (L @ V) - m * (n - C)
    RS = stiffness(device.mesh, n) @ S
    for R in (Rr, RV, RS):
        R[d] = 0.0
    return Rr, RV, RS


def residual_norm(device: Device, res: tuple[np.ndarray, ...]) -> float:
    """Max-norm of the strong-form (mass-scaled) residuals."""
    m = device.mass
    return max(float(np.max(np.abs(R / m))) for R in res)


def jacobian(device: Device, C: np.ndarray, eps2: float, rho, V, S) -> sp.csc_matrix:
    """Jacobian of the free-node residuals w.r.t. the free unknowns.

    Unknown order is ``(rho, V, S)`` for eps2 > 0 and ``(V, S)`` for eps2 == 0.
    """
    mesh, m, L, f = device.mesh, device.mass, device.laplacian, device.free
    lam2 = device.lam2
    if eps2 == 0.0:
        n = boltzmann_density(device, V, S)
        nf = np.where(mesh.dirichlet, 0.0, n)
        D = weight_derivative(mesh, S)
        A = stiffness(mesh, n)
        JVV = lam2 * L + sp.diags(m * nf)
        JVS = sp.diags(-m * nf)
        JSV = D @ sp.diags(-nf)
        JSS = A + D @ sp.diags(nf)
        blocks = [[JVV, JVS], [JSV, JSS]]
    else:
        n = rho**2
        Jrr = eps2 * L + sp.diags(m * (np.log(n) + 2.0 + V + device.v_ext - S))
        JrV = sp.diags(m * rho)
        JrS = sp.diags(-m * rho)
        JVr = sp.diags(-2.0 * m * rho)
        JVV = lam2 * L
        JSr = weight_derivative(mesh, S) @ sp.diags(2.0 * rho)
        JSS = stiffness(mesh, n)
        blocks = [[Jrr, JrV, JrS], [JVr, JVV, None], [JSr, None, JSS]]
    sub = [[None if B is None else B.tocsr()[f][:, f] for B in row] for row in blocks]
    return sp.bmat(sub, format="csc")


# ---------------------------------------------------------------------------
# single-equation solves


def solve_poisson_V(device: Device, rho: np.ndarray, C: np.ndarray, lam2: float | None = None) -> np.ndarray:
    """``-lam2 Laplace V = rho^2 - C`` with ``V = V_D`` on contacts."""
    lam2 = device.lam2 if lam2 is None else lam2
    if lam2 <= 0:
        raise ValueError("lambda^2 must be positive")
    return device.solve_laplace(device.mass * (rho**2 - C) / lam2, device.bc.V_D)


def solve_continuity_S(device: Device, rho: np.ndarray | None = None, n: np.ndarray | None = None,
                       floor: float = 0.0) -> np.ndarray:
    """``-div(rho^2 grad S) = 0`` with ``S = S_D`` on contacts and zero flux elsewhere."""
    if n is None:
        if np.min(rho) <= floor:
            raise PositivityError(f"rho = {np.min(rho):.3e} is below the floor {floor:.1e}")
        n = rho**2
    op = assemble_weighted_laplacian(device.mesh, n, device.bc.S_D)
    return solve_linear(op, np.zeros(device.mesh.n_nodes))


def _positive_step(x: np.ndarray, dx: np.ndarray, keep: float = 0.1) -> float:
    """Largest t <= 1 keeping ``x + t dx >= keep * x`` componentwise."""
    neg = dx < 0
    if not np.any(neg):
        return 1.0
    return float(min(1.0, np.min((1.0 - keep) * x[neg] / -dx[neg])))


def _newton(fun, jac, x0: np.ndarray, tol: float, max_iter: int, scale, positive: np.ndarray | None = None,
            what: str = "Newton"):
    """Damped Newton on the free unknowns with residual-merit backtracking.

    ``fun(x) -> (residual list)``; ``scale(res) -> (merit, max-norm)``.
    ``positive`` marks unknowns that must stay positive.
    """
    x = x0.copy()
    res = fun(x)
    merit, err = scale(res)
    for it in range(max_iter + 1):
        if err <= tol:
            return x, err, it
        if it == max_iter:
            break
        J = jac(x)
        r = np.concatenate(res)
        try:
            dx = spla.splu(J).solve(-r)
        except RuntimeError as exc:  # singular factor
            raise LinearSolverError(f"{what}: singular Jacobian ({exc})") from exc
        t = 1.0 if positive is None else _positive_step(x[positive], dx[positive])
        for _ in range(40):
            x_new = x + t * dx
            res_new = fun(x_new)
            merit_new, err_new = scale(res_new)
            if np.isfinite(merit_new) and merit_new < (1.0 - 1e-4 * t) * merit:
                break
            t *= 0.5
        else:
            raise NonConvergenceError(f"{what}: line search stalled", err, it)
        x, res, merit, err = x_new, res_new, merit_new, err_new
    raise NonConvergenceError(f"{what}: no convergence in {max_iter} iterations (residual {err:.3e})", err, max_iter)


def _scaler(device: Device, blocks: int):
    mf = device.mass[device.free]

    def scale(res):
        merit = float(np.sqrt(sum(np.sum(R * R / mf) for R in res)))
        err = max(float(np.max(np.abs(R / mf))) for R in res)
        return merit, err

    return scale


def solve_density_rho(device: Device, V: np.ndarray, S: np.ndarray, eps2: float,
                      cfg: SolverConfig | None = None, rho_init: np.ndarray | None = None) -> np.ndarray:
    """Density equation with frozen ``V`` and ``S``: ``-eps2 Lap rho + rho(log rho^2 + V + V_ext - S) = 0``."""
    cfg = cfg or SolverConfig()
    if eps2 <= 0:
        raise ValueError("eps2 must be positive for the density equation")
    mesh, m, L, f = device.mesh, device.mass, device.laplacian, device.free
    rho = np.where(mesh.dirichlet, device.bc.rho_D, 1.0) if rho_init is None else rho_init.copy()
    rho[mesh.dirichlet] = device.bc.rho_D[mesh.dirichlet]
    pot = V + device.v_ext - S

    def full(x):
        r = rho.copy()
        r[f] = x
        return r

    def fun(x):
        r = full(x)
        R = eps2 * (L @ r) + m * r * (np.log(r**2) + pot)
        return [R[f]]

    def jac(x):
        r = full(x)
        J = eps2 * L + sp.diags(m * (np.log(r**2) + 2.0 + pot))
        return J.tocsr()[f][:, f].tocsc()

    x, err, _ = _newton(fun, jac, rho[f], cfg.newton_tol, cfg.max_newton, _scaler(device, 1),
                        positive=np.ones(len(f), dtype=bool), what="density Newton")
    return full(x)


def _solve_rho_V(device: Device, C, eps2, rho, V, S, cfg: SolverConfig):
    """Coupled density/Poisson solve at fixed ``S`` (inner step of Gummel)."""
    mesh, m, L, f = device.mesh, device.mass, device.laplacian, device.free
    nf = len(f)
    pot = device.v_ext - S

    def unpack(x):
        r, v = rho.copy(), V.copy()
        r[f], v[f] = x[:nf], x[nf:]
        return r, v

    def fun(x):
        r, v = unpack(x)
        n = r**2
        Rr = eps2 * (L @ r) + m * r * (np.log(n) + v + pot)
        RV = device.lam2 * (L @ v) - m * (n - C)
        return [Rr[f], RV[f]]

    def jac(x):
        r, v = unpack(x)
        Jrr = (eps2 * L + sp.diags(m * (np.log(r**2) + 2.0 + v + pot))).tocsr()[f][:, f]
        d = m[f] * r[f]
        return sp.bmat([[Jrr, sp.diags(d)], [sp.diags(-2.0 * d), device.lam2 * device.laplacian_ff]],
                       format="csc")

    pos = np.zeros(2 * nf, dtype=bool)
    pos[:nf] = True
    x, err, it = _newton(fun, jac, np.concatenate([rho[f], V[f]]), cfg.newton_tol, cfg.max_newton,
                         _scaler(device, 2), positive=pos, what="density-potential Newton")
    r, v = unpack(x)
    return r, v, it


def _solve_V_dd(device: Device, C, V, S, cfg: SolverConfig):
    """Nonlinear Poisson ``lam2 L V = m (exp(S - V - V_ext) - C)`` at fixed ``S``."""
    mesh, m, L, f = device.mesh, device.mass, device.laplacian, device.free

    def full(x):
        v = V.copy()
        v[f] = x
        return v

    def fun(x):
        v = full(x)
        n = boltzmann_density(device, v, S)
        return [(device.lam2 * (L @ v) - m * (n - C))[f]]

    def jac(x):
        v = full(x)
        n = boltzmann_density(device, v, S)
        return (device.lam2 * device.laplacian_ff + sp.diags(m[f] * n[f])).tocsc()

    x, err, it = _newton(fun, jac, V[f], cfg.newton_tol, cfg.max_newton, _scaler(device, 1),
                         what="nonlinear Poisson Newton")
    return full(x), it


# ---------------------------------------------------------------------------
# coupled solve


def _initial_state(device: Device, C: np.ndarray, eps2: float) -> tuple[np.ndarray, ...]:
    mesh = device.mesh
    from .doping import smooth_neumann  # local import: doping imports discrete only

    d = mesh.dirichlet
    rho = smooth_neumann(mesh, np.sqrt(np.maximum(C, 1e-300)), 2.0 * np.sqrt(mesh.hx * mesh.hy))
    rho[d] = device.bc.rho_D[d]
    V = solve_poisson_V(device, rho, C)
    S = device.solve_laplace(np.zeros(mesh.n_nodes), device.bc.S_D)
    rho = np.sqrt(boltzmann_density(device, V, S))
    return rho, V, S


def _apply_traces(device: Device, rho, V, S):
    d = device.mesh.dirichlet
    rho, V, S = rho.copy(), V.copy(), S.copy()
    rho[d] = device.bc.rho_D[d]
    V[d] = device.bc.V_D[d]
    S[d] = device.bc.S_D[d]
    return rho, V, S


def coupled_newton(device: Device, C, eps2, rho, V, S, cfg: SolverConfig, tol: float | None = None):
    """Full Newton on the coupled discrete system, started from ``(rho, V, S)``."""
    f = device.free
    nf = len(f)
    tol = cfg.nonlinear_tol if tol is None else tol
    nblk = 2 if eps2 == 0.0 else 3

    def unpack(x):
        if eps2 == 0.0:
            v, s = V.copy(), S.copy()
            v[f], s[f] = x[:nf], x[nf:]
            return np.sqrt(boltzmann_density(device, v, s)), v, s
        r, v, s = rho.copy(), V.copy(), S.copy()
        r[f], v[f], s[f] = x[:nf], x[nf : 2 * nf], x[2 * nf :]
        return r, v, s

    def fun(x):
        return [R[f] for R in residuals(device, C, eps2, *unpack(x))]

    def jac(x):
        return jacobian(device, C, eps2, *unpack(x))

    if eps2 == 0.0:
        x0 = np.concatenate([V[f], S[f]])
        pos = None
    else:
        x0 = np.concatenate([rho[f], V[f], S[f]])
        pos = np.zeros(3 * nf, dtype=bool)
        pos[:nf] = True
    x, err, it = _newton(fun, jac, x0, tol, cfg.max_newton, _scaler(device, nblk), positive=pos,
                         what="coupled Newton")
    r, v, s = unpack(x)
    return r, v, s, err, it


def gummel_solve(device: Device, C: np.ndarray, eps2: float, cfg: SolverConfig | None = None,
                 warm_start: StateTriple | None = None) -> StateTriple:
    """Solve the state system by Gummel decoupling, finished by coupled Newton.

    Each Gummel sweep solves density and potential together at frozen ``S``
    (the classical path solves the nonlinear Poisson equation instead), then
    the continuity equation for ``S``; the ``S`` update is damped.  Once the
    combined residual drops below ``cfg.newton_switch`` a coupled Newton solve
    takes over.
    """
    cfg = cfg or SolverConfig()
    C = np.asarray(C, dtype=float)
    if eps2 < 0:
        raise ValueError("eps2 must be non-negative")
    if warm_start is not None:
        rho, V, S = _apply_traces(device, warm_start.rho, warm_start.V, warm_start.S)
        if eps2 == 0.0:
            rho = np.sqrt(boltzmann_density(device, V, S))
    elif eps2 > 0.0:
        # the classical state is the leading-order approximation for small eps
        dd = gummel_solve(device, C, 0.0, cfg)
        rho, V, S = dd.rho, dd.V, dd.S
    else:
        rho, V, S = _initial_state(device, C, eps2)

    res = residual_norm(device, residuals(device, C, eps2, rho, V, S))
    theta = cfg.damping
    newton_its = 0
    tried_newton_at = np.inf
    for k in range(cfg.max_gummel + 1):
        if res <= cfg.nonlinear_tol:
            return _finish(device, cfg, rho, V, S, eps2, res, k, newton_its)
        if res <= cfg.newton_switch and res < 0.1 * tried_newton_at:
            tried_newton_at = res
            try:
                r2, v2, s2, err, it = coupled_newton(device, C, eps2, rho, V, S, cfg)
                newton_its += it
                return _finish(device, cfg, r2, v2, s2, eps2, err, k, newton_its)
            except (NonConvergenceError, LinearSolverError) as exc:
                log.debug("coupled Newton failed at Gummel step %d: %s", k, exc)
        if k == cfg.max_gummel:
            break
        if eps2 == 0.0:
            V, it = _solve_V_dd(device, C, V, S, cfg)
            rho = np.sqrt(boltzmann_density(device, V, S))
        else:
            rho, V, it = _solve_rho_V(device, C, eps2, rho, V, S, cfg)
        newton_its += it
        S_new = solve_continuity_S(device, n=rho**2)
        S = S + theta * (S_new - S)
        if eps2 == 0.0:
            rho = np.sqrt(boltzmann_density(device, V, S))
        new_res = residual_norm(device, residuals(device, C, eps2, rho, V, S))
        if new_res > res:
            theta = max(0.5 * theta, cfg.min_damping)
        res = new_res
        log.debug("gummel %d: residual %.3e damping %.3g", k + 1, res, theta)
    raise NonConvergenceError(
        f"Gummel iteration did not converge in {cfg.max_gummel} sweeps (residual {res:.3e})",
        res,
        cfg.max_gummel,
    )


def _finish(device, cfg, rho, V, S, eps2, res, k, newton_its) -> StateTriple:
    if np.min(rho) <= cfg.rho_floor:
        raise PositivityError(f"density fell to {np.min(rho):.3e}, below the floor {cfg.rho_floor:.1e}")
    cfg.enthalpy.check(rho**2)
    return StateTriple(rho, V, S, eps2, res, k, newton_its)


def solve_dd(device: Device, C: np.ndarray, cfg: SolverConfig | None = None,
             warm_start: StateTriple | None = None) -> StateTriple:
    """Classical drift-diffusion state (eps = 0)."""
    return gummel_solve(device, C, 0.0, cfg, warm_start)


def solve_state(device: Device, C: np.ndarray, eps2: float, cfg: SolverConfig | None = None,
                warm_start: StateTriple | None = None) -> StateTriple:
    return gummel_solve(device, C, eps2, cfg, warm_start)


# ---------------------------------------------------------------------------
# energy


def energy_eval(device: Device, rho: np.ndarray, S: np.ndarray, C: np.ndarray, eps2: float,
                lam2: float | None = None, enthalpy: EnthalpyModel = EnthalpyModel()) -> float:
    """Discrete free energy whose free-node gradient is ``2 R_rho`` with ``V = Phi_V[rho^2 - C]``.

    ``eps2 int |grad rho|^2 + int H(rho^2) + lam2/2 int |grad Phi[rho^2 - C]|^2
    + int (Phi_e + V_ext - S) rho^2``, where ``Phi_e`` is the harmonic
    extension of the contact potential.  For zero contact potential this is the
    usual four-term energy with ``V`` in place of ``Phi``.
    """
    lam2 = device.lam2 if lam2 is None else lam2
    if np.min(rho) <= 0:
        raise PositivityError("energy requires a strictly positive density")
    m, L = device.mass, device.laplacian
    n = rho**2
    phi = device.solve_laplace(m * (n - C) / lam2)
    return float(
        eps2 * rho @ (L @ rho)
        + np.sum(m * enthalpy.H(n))
        + 0.5 * lam2 * phi @ (L @ phi)
        + np.sum(m * (device.potential_lift + device.v_ext - S) * n)
    )
