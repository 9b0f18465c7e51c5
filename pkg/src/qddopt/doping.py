"""Reference doping profile and contact boundary data (rho_D, V_D, S_D)."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .discrete import SparseOperator, solve_linear, stiffness
from .mesh import DeviceGeometry, Mesh


@dataclass(eq=False)
class DopingProfile:
    C: np.ndarray
    C_ref: np.ndarray
    smoothing_length: float

    def with_C(self, C: np.ndarray) -> "DopingProfile":
        return DopingProfile(np.asarray(C, dtype=float), self.C_ref, self.smoothing_length)


@dataclass(eq=False)
class BoundaryData:
    """Contact traces on every node; entries off the Dirichlet set are zero."""

    rho_D: np.ndarray
    V_D: np.ndarray
    S_D: np.ndarray
    delta_c: float


def piecewise_doping(geom: DeviceGeometry, mesh: Mesh) -> np.ndarray:
    C0 = np.full(mesh.n_nodes, geom.channel_doping)
    tol = 1e-12
    for x0, x1, y0, y1 in geom.nplus_regions:
        inside = (
            (mesh.x >= x0 - tol) & (mesh.x <= x1 + tol) & (mesh.y >= y0 - tol) & (mesh.y <= y1 + tol)
        )
        C0[inside] = geom.nplus_doping
    return C0


def smooth_neumann(mesh: Mesh, f: np.ndarray, length: float) -> np.ndarray:
    """Solve ``(I - length^2 Laplace) u = f`` with zero Neumann flux on the whole boundary."""
    if length == 0.0:
        return np.array(f, dtype=float)
    A = (sp.diags(mesh.mass) + length**2 * stiffness(mesh)).tocsr()
    op = SparseOperator(A, np.zeros(mesh.n_nodes), np.zeros(mesh.n_nodes, dtype=bool))
    return solve_linear(op, mesh.mass * f)


def build_reference_doping(geom: DeviceGeometry, mesh: Mesh, smoothing_length: float = 2.0) -> DopingProfile:
    """Piecewise n+/channel profile mollified by a screened Laplacian.

    ``smoothing_length`` is in grid cells.
    """
    if smoothing_length < 0:
        raise ValueError("smoothing_length must be non-negative")
    C0 = piecewise_doping(geom, mesh)
    sigma = smoothing_length * np.sqrt(mesh.hx * mesh.hy)
    C_ref = smooth_neumann(mesh, C0, sigma)
    # the mollifier is a discrete averaging operator; clip roundoff only
    C_ref = np.clip(C_ref, geom.channel_doping, geom.nplus_doping)
    return DopingProfile(C_ref.copy(), C_ref, smoothing_length)


def build_boundary_data(mesh: Mesh, C_ref: np.ndarray, delta_c: float = 1.0) -> BoundaryData:
    """Charge-neutral traces ``rho_D = a sqrt(C)``, ``V_D = -log(rho_D^2/dc^2) + U``, ``S_D = log(rho_D^2/dc^2) + U``.

    ``a`` is the contact's Schottky factor (1 for Ohmic contacts).
    """
    if delta_c <= 0:
        raise ValueError("delta_c must be positive")
    n = mesh.n_nodes
    rho_D, V_D, S_D = np.zeros(n), np.zeros(n), np.zeros(n)
    for c in mesh.geometry.contacts:
        nodes = mesh.contact_nodes[c.name]
        if np.any(C_ref[nodes] <= 0):
            raise ValueError(f"reference doping must be positive on contact {c.name}")
        r = c.schottky_factor * np.sqrt(C_ref[nodes])
        log_term = np.log(r**2 / delta_c**2)
        rho_D[nodes] = r
        V_D[nodes] = -log_term + c.voltage
        S_D[nodes] = log_term + c.voltage
    return BoundaryData(rho_D, V_D, S_D, delta_c)
