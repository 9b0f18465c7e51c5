"""A discretised device: mesh, reference doping, contact data, physics constants and cached operators."""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
import scipy.sparse as sp

from .discrete import SparseOperator, contact_mask, pin, solve_linear, stiffness
from .doping import BoundaryData, build_boundary_data, build_reference_doping
from .mesh import DeviceGeometry, Mesh, build_mesh


@dataclass(eq=False)
class Device:
    mesh: Mesh
    C_ref: np.ndarray
    bc: BoundaryData
    lam2: float
    v_ext: np.ndarray = field(default=None)
    output_contact: str = "drain"

    def __post_init__(self):
        if self.lam2 <= 0:
            raise ValueError("lambda^2 must be positive")
        if self.v_ext is None:
            self.v_ext = np.zeros(self.mesh.n_nodes)

    @property
    def mass(self) -> np.ndarray:
        return self.mesh.mass

    @property
    def free(self) -> np.ndarray:
        return self.mesh.free

    @cached_property
    def laplacian(self) -> sp.csr_matrix:
        """Unpinned unit-weight stiffness matrix."""
        return stiffness(self.mesh)

    @cached_property
    def laplacian_ff(self) -> sp.csr_matrix:
        f = self.free
        return self.laplacian[f][:, f].tocsc()

    @cached_property
    def homogeneous_laplace(self) -> SparseOperator:
        """Pinned Laplacian with zero trace; factorised once and reused."""
        return pin(self.laplacian, self.mesh.dirichlet)

    def solve_laplace(self, load: np.ndarray, trace: np.ndarray | None = None) -> np.ndarray:
        """``L u = load`` on free nodes with ``u = trace`` on contacts (zero if omitted)."""
        if trace is None:
            return solve_linear(self.homogeneous_laplace, load)
        t = np.where(self.mesh.dirichlet, trace, 0.0)
        return solve_linear(self.homogeneous_laplace, load - self.laplacian @ t) + t

    @cached_property
    def potential_lift(self) -> np.ndarray:
        """Harmonic extension of V_D (the external-contact part of the potential)."""
        return self.solve_laplace(np.zeros(self.mesh.n_nodes), self.bc.V_D)

    @cached_property
    def output_mask(self) -> np.ndarray:
        return contact_mask(self.mesh, self.output_contact)


def build_device(
    geom: DeviceGeometry,
    nx: int,
    ny: int | None = None,
    lam2: float = 0.0017,
    delta_c: float = 1.0,
    smoothing_length: float = 2.0,
    v_ext: float | np.ndarray | None = None,
) -> Device:
    mesh = build_mesh(geom, nx, nx if ny is None else ny)
    profile = build_reference_doping(geom, mesh, smoothing_length)
    bc = build_boundary_data(mesh, profile.C_ref, delta_c)
    if v_ext is not None:
        v_ext = np.broadcast_to(np.asarray(v_ext, dtype=float), (mesh.n_nodes,)).copy()
    return Device(mesh, profile.C_ref, bc, lam2, v_ext)
