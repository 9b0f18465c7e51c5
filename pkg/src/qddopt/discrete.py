"""Grid fields, 5-point finite-volume operators, linear solves and the contact-current functional.

All operators live on the node grid of a :class:`~qddopt.mesh.Mesh`.  The
stiffness matrix of ``-div(w grad u)`` is assembled edge by edge,

    A(w) = sum_e kappa_e * wbar_e * (e_p - e_q)(e_p - e_q)^T,

with ``wbar_e`` the arithmetic mean of the nodal weight over the edge and
``kappa_e`` the dual-face length over the edge length.  Zero Neumann flux is
built in; Dirichlet nodes are pinned.  The lumped mass (control-volume areas)
doubles as the trapezoidal quadrature rule, so ``u^T A(1) u`` is the discrete
``||grad u||^2`` and ``sum(m * u * v)`` the discrete L2 product.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import LinearSolverError, MeshMismatchError, PositivityError
from .mesh import Mesh, boundary_nodes

LINEAR_TOL = 1e-12
DIRECT_MAX_NODES = 160 * 160
ROLES = ("dirichlet_lifted", "homogeneous", "free")


@dataclass(eq=False)
class ScalarField:
    mesh: Mesh
    values: np.ndarray
    role: str = "free"

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != (self.mesh.n_nodes,):
            raise MeshMismatchError(
                f"field has shape {self.values.shape}, mesh has {self.mesh.n_nodes} nodes"
            )
        if self.role not in ROLES:
            raise ValueError(f"unknown bc role {self.role!r}")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("field contains non-finite values")
        if self.role == "homogeneous" and np.any(self.values[self.mesh.dirichlet] != 0.0):
            raise ValueError("homogeneous field must vanish on every Dirichlet node")


def _unwrap(a, mesh: Mesh | None) -> tuple[np.ndarray, Mesh]:
    if isinstance(a, ScalarField):
        if mesh is not None and a.mesh is not mesh:
            raise MeshMismatchError("fields live on different meshes")
        return a.values, a.mesh
    if mesh is None:
        raise MeshMismatchError("a mesh is required for raw arrays")
    a = np.asarray(a, dtype=float)
    if a.shape != (mesh.n_nodes,):
        raise MeshMismatchError(f"array of shape {a.shape} does not match mesh with {mesh.n_nodes} nodes")
    return a, mesh


def edge_weights(mesh: Mesh, w: np.ndarray | float | None) -> np.ndarray:
    p, q, kappa = mesh.edges
    if w is None:
        return kappa
    w = np.broadcast_to(np.asarray(w, dtype=float), (mesh.n_nodes,))
    return kappa * 0.5 * (w[p] + w[q])


def stiffness(mesh: Mesh, w: np.ndarray | float | None = None) -> sp.csr_matrix:
    """Unpinned stiffness matrix of -div(w grad .) over all nodes (symmetric, rows sum to zero)."""
    p, q, _ = mesh.edges
    c = edge_weights(mesh, w)
    n = mesh.n_nodes
    rows = np.concatenate([p, q, p, q])
    cols = np.concatenate([p, q, q, p])
    vals = np.concatenate([c, c, -c, -c])
    return sp.csr_matrix((vals, (rows, cols)), shape=(n, n))


def weight_derivative(mesh: Mesh, S: np.ndarray) -> sp.csr_matrix:
    """Jacobian of ``A(w) @ S`` with respect to the nodal weight ``w``."""
    p, q, kappa = mesh.edges
    g = 0.5 * kappa * (S[p] - S[q])
    rows = np.concatenate([p, p, q, q])
    cols = np.concatenate([p, q, p, q])
    vals = np.concatenate([g, g, -g, -g])
    n = mesh.n_nodes
    return sp.csr_matrix((vals, (rows, cols)), shape=(n, n))


@dataclass(eq=False)
class SparseOperator:
    """Pinned operator: ``matrix @ u = rhs_masked + lift``.

    Free rows hold the stiffness rows with Dirichlet columns moved into
    ``lift``; Dirichlet rows are identity rows whose ``lift`` entry is the trace.
    """

    matrix: sp.csr_matrix
    lift: np.ndarray
    dirichlet: np.ndarray
    _factor: object = field(default=None, repr=False)

    @property
    def size(self) -> int:
        return self.matrix.shape[0]


def pin(A: sp.spmatrix, dirichlet: np.ndarray, trace: np.ndarray | None = None) -> SparseOperator:
    """Pin Dirichlet rows and columns of an unpinned operator, keeping symmetry."""
    n = A.shape[0]
    trace = np.zeros(n) if trace is None else np.where(dirichlet, trace, 0.0)
    free = (~dirichlet).astype(float)
    Df = sp.diags(free)
    lift = -(Df @ (A @ trace)) + trace
    M = (Df @ A @ Df + sp.diags(dirichlet.astype(float))).tocsr()
    return SparseOperator(M, lift, dirichlet.copy())


def assemble_weighted_laplacian(
    mesh: Mesh,
    w: np.ndarray | float | None = None,
    trace: np.ndarray | None = None,
    dirichlet: np.ndarray | None = None,
) -> SparseOperator:
    """5-point finite-volume ``-div(w grad .)`` with Dirichlet rows pinned to ``trace``.

    ``dirichlet`` defaults to the contact nodes of the mesh; pass an all-false
    mask for a pure Neumann operator (singular unless shifted).
    """
    if w is not None:
        w_arr = np.broadcast_to(np.asarray(w, dtype=float), (mesh.n_nodes,))
        if not np.all(w_arr > 0.0):
            raise PositivityError(f"weight must be strictly positive, min = {w_arr.min():.3e}")
    mask = mesh.dirichlet if dirichlet is None else np.asarray(dirichlet, dtype=bool)
    return pin(stiffness(mesh, w), mask, trace)


def _solve_matrix(op: SparseOperator, b: np.ndarray) -> np.ndarray:
    if op.size <= DIRECT_MAX_NODES:
        if op._factor is None:
            op._factor = spla.splu(op.matrix.tocsc())
        return op._factor.solve(b)
    if op._factor is None:
        op._factor = spla.spilu(op.matrix.tocsc(), drop_tol=1e-5, fill_factor=20)
    prec = spla.LinearOperator(op.matrix.shape, op._factor.solve)
    u, info = spla.cg(op.matrix, b, rtol=LINEAR_TOL, atol=0.0, maxiter=10 * op.size, M=prec)
    if info != 0:
        res = float(np.linalg.norm(op.matrix @ u - b))
        raise LinearSolverError(f"conjugate gradient did not converge (info={info})", res)
    return u


def solve_linear(op: SparseOperator, rhs: np.ndarray, tol: float = LINEAR_TOL) -> np.ndarray:
    """Solve the pinned system; ``rhs`` entries on Dirichlet rows are ignored."""
    rhs = np.asarray(rhs, dtype=float)
    if not np.all(np.isfinite(rhs)):
        raise LinearSolverError("right-hand side contains non-finite values")
    b = np.where(op.dirichlet, 0.0, rhs) + op.lift
    u = _solve_matrix(op, b)
    r = op.matrix @ u - b
    if np.linalg.norm(r) > tol * (1.0 + np.linalg.norm(b)):
        u = u - _solve_matrix(op, r)
        r = op.matrix @ u - b
        res = float(np.linalg.norm(r))
        if res > tol * (1.0 + np.linalg.norm(b)):
            raise LinearSolverError(f"linear residual {res:.3e} above tolerance", res)
    return u


def solve_pde(
    mesh: Mesh,
    f: np.ndarray | float,
    trace: np.ndarray | None = None,
    w: np.ndarray | float | None = None,
    dirichlet: np.ndarray | None = None,
) -> np.ndarray:
    """Solve ``-div(w grad u) = f`` with Dirichlet ``trace`` and zero Neumann flux elsewhere."""
    op = assemble_weighted_laplacian(mesh, w, trace, dirichlet)
    load = mesh.mass * np.broadcast_to(np.asarray(f, dtype=float), (mesh.n_nodes,))
    return solve_linear(op, load)


def inner_l2(a, b, mesh: Mesh | None = None) -> float:
    a, mesh = _unwrap(a, mesh)
    b, _ = _unwrap(b, mesh)
    return float(np.sum(mesh.mass * a * b))


def grad_seminorm_sq(a, mesh: Mesh | None = None) -> float:
    a, mesh = _unwrap(a, mesh)
    p, q, kappa = mesh.edges
    return float(np.sum(kappa * (a[p] - a[q]) ** 2))


def norm_h1(a, mesh: Mesh | None = None) -> float:
    a, mesh = _unwrap(a, mesh)
    return float(np.sqrt(inner_l2(a, a, mesh) + grad_seminorm_sq(a, mesh)))


def contact_mask(mesh: Mesh, contact: str) -> np.ndarray:
    """Discrete-harmonic function equal to 1 on ``contact`` and 0 on all other contacts."""
    trace = np.zeros(mesh.n_nodes)
    trace[boundary_nodes(mesh, contact)] = 1.0
    return solve_pde(mesh, 0.0, trace)


def _check_mask(mesh: Mesh, mask: np.ndarray) -> None:
    d = mesh.dirichlet
    vals = mask[d]
    if not np.all((vals == 0.0) | (vals == 1.0)):
        raise MeshMismatchError("current mask must be 0 or 1 on every Dirichlet node")
    for name, nodes in mesh.contact_nodes.items():
        if len(np.unique(mask[nodes])) > 1:
            raise MeshMismatchError(f"current mask is not constant on contact {name}")


def boundary_current(rho, S, mask, mesh: Mesh | None = None, density=None) -> float:
    """Volume-form contact current ``sum_e c_e(rho^2) dS_e dmask_e``.

    For a discretely divergence-free ``S`` this equals the outward flux
    ``int rho^2 dS/dnu`` through the contacts where ``mask`` is one.  Pass
    ``density`` to use a nodal electron density in place of ``rho**2``.
    """
    rho, mesh = _unwrap(rho, mesh)
    S, _ = _unwrap(S, mesh)
    mask, _ = _unwrap(mask, mesh)
    _check_mask(mesh, mask)
    n = rho**2 if density is None else _unwrap(density, mesh)[0]
    p, q, _ = mesh.edges
    c = edge_weights(mesh, n)
    return float(np.sum(c * (S[p] - S[q]) * (mask[p] - mask[q])))


def contact_currents(mesh: Mesh, n: np.ndarray, S: np.ndarray) -> dict[str, float]:
    """Outward current through each contact, as the nodal flux residual of ``A(n) S``."""
    flux = stiffness(mesh, n) @ S
    return {name: float(flux[nodes].sum()) for name, nodes in mesh.contact_nodes.items()}


def direct_boundary_flux(mesh: Mesh, n: np.ndarray, S: np.ndarray, contact: str) -> float:
    """One-sided second-order ``int n dS/dnu ds`` over a contact (diagnostic only)."""
    spec = mesh.geometry.contact(contact)
    nodes = boundary_nodes(mesh, contact)
    if spec is None or len(nodes) == 0:
        return 0.0
    nx = mesh.nx
    step, h, ds = {
        "bottom": (nx, mesh.hy, mesh.hx),
        "top": (-nx, mesh.hy, mesh.hx),
        "left": (1, mesh.hx, mesh.hy),
        "right": (-1, mesh.hx, mesh.hy),
    }[spec.edge]
    dnu = -(-3.0 * S[nodes] + 4.0 * S[nodes + step] - S[nodes + 2 * step]) / (2.0 * h)
    wts = np.full(len(nodes), ds)
    wts[[0, -1]] *= 0.5
    return float(np.sum(wts * n[nodes] * dnu))


def current_density_peak(mesh: Mesh, n: np.ndarray, S: np.ndarray) -> float:
    """Max over cells of |n grad S| with cell-centred differences."""
    nx, ny = mesh.nx, mesh.ny
    Sg = S.reshape(ny, nx)
    ng = n.reshape(ny, nx)
    dx = 0.5 * ((Sg[:-1, 1:] - Sg[:-1, :-1]) + (Sg[1:, 1:] - Sg[1:, :-1])) / mesh.hx
    dy = 0.5 * ((Sg[1:, :-1] - Sg[:-1, :-1]) + (Sg[1:, 1:] - Sg[:-1, 1:])) / mesh.hy
    nc = 0.25 * (ng[:-1, :-1] + ng[1:, :-1] + ng[:-1, 1:] + ng[1:, 1:])
    return float(np.max(nc * np.hypot(dx, dy)))


def write_field_csv(path: str | Path, mesh: Mesh, values: np.ndarray) -> None:
    path = Path(path)
    values = np.asarray(values, dtype=float)
    with path.open("w", newline="") as fh:
        fh.write("x,y,value\n")
        for x, y, v in zip(mesh.x, mesh.y, values):
            fh.write(f"{x:.17g},{y:.17g},{v:.17g}\n")


def read_field_csv(path: str | Path) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    with Path(path).open(newline="") as fh:
        rows = list(csv.DictReader(fh))
    arr = np.array([[float(r["x"]), float(r["y"]), float(r["value"])] for r in rows])
    return arr[:, 0], arr[:, 1], arr[:, 2]
