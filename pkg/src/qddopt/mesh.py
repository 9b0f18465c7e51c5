"""Rectangular device geometry, tensor-product grid and boundary classification."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from .errors import GeometryError

EDGES = ("bottom", "top", "left", "right")
CONTACT_NAMES = ("source", "gate", "drain")
NEUMANN = -1


@dataclass(frozen=True)
class ContactSpec:
    name: str
    edge: str
    span: tuple[float, float]
    voltage: float = 0.0
    schottky_factor: float = 1.0

    def __post_init__(self):
        if self.name not in CONTACT_NAMES:
            raise GeometryError(f"unknown contact name {self.name!r}")
        if self.edge not in EDGES:
            raise GeometryError(f"contact {self.name}: unknown edge {self.edge!r}")
        a, b = self.span
        if not b > a:
            raise GeometryError(f"contact {self.name}: empty span {self.span}")
        if not 0.0 < self.schottky_factor <= 1.0:
            raise GeometryError(f"contact {self.name}: schottky_factor must lie in (0, 1]")


@dataclass(frozen=True)
class DeviceGeometry:
    width: float
    height: float
    contacts: tuple[ContactSpec, ...]
    nplus_regions: tuple[tuple[float, float, float, float], ...] = ()
    channel_doping: float = 0.01
    nplus_doping: float = 1.0

    def __post_init__(self):
        if self.width <= 0 or self.height <= 0:
            raise GeometryError("domain extent must be positive")
        if not self.contacts:
            raise GeometryError("at least one contact is required")
        names = [c.name for c in self.contacts]
        if len(set(names)) != len(names):
            raise GeometryError(f"duplicate contact names in {names}")
        for c in self.contacts:
            length = self.width if c.edge in ("bottom", "top") else self.height
            a, b = c.span
            if a < 0.0 or b > length:
                raise GeometryError(f"contact {c.name}: span {c.span} leaves the {c.edge} edge")
        for i, c in enumerate(self.contacts):
            for o in self.contacts[i + 1 :]:
                if c.edge == o.edge and c.span[0] <= o.span[1] and o.span[0] <= c.span[1]:
                    raise GeometryError(f"contacts {c.name} and {o.name} overlap or touch on the {c.edge} edge")
        for x0, x1, y0, y1 in self.nplus_regions:
            if not (0.0 <= x0 < x1 <= self.width and 0.0 <= y0 < y1 <= self.height):
                raise GeometryError(f"n+ region {(x0, x1, y0, y1)} is not inside the domain")
        if not self.nplus_doping > self.channel_doping > 0.0:
            raise GeometryError("need nplus_doping > channel_doping > 0")

    def contact(self, name: str) -> ContactSpec | None:
        for c in self.contacts:
            if c.name == name:
                return c
        return None


def default_mesfet_geometry(
    voltage_scale: float = 0.1,
    gate_schottky: float = 0.1,
    u_source: float = 0.0375,
    u_gate: float = 0.075,
    u_drain: float = 0.15,
) -> DeviceGeometry:
    """Unit-square MESFET: source, gate, drain on the top edge, n+ blocks under source and drain."""
    return DeviceGeometry(
        width=1.0,
        height=1.0,
        contacts=(
            ContactSpec("source", "top", (0.0, 0.15), voltage_scale * u_source, 1.0),
            ContactSpec("gate", "top", (0.425, 0.575), voltage_scale * u_gate, gate_schottky),
            ContactSpec("drain", "top", (0.85, 1.0), voltage_scale * u_drain, 1.0),
        ),
        nplus_regions=((0.0, 0.25, 0.8, 1.0), (0.75, 1.0, 0.8, 1.0)),
        channel_doping=0.01,
        nplus_doping=1.0,
    )


def _edge_nodes(nx: int, ny: int, edge: str) -> np.ndarray:
    """Node indices along an edge, ordered by increasing coordinate."""
    if edge == "bottom":
        return np.arange(nx)
    if edge == "top":
        return (ny - 1) * nx + np.arange(nx)
    if edge == "left":
        return np.arange(ny) * nx
    return np.arange(ny) * nx + nx - 1


@dataclass(frozen=True, eq=False)
class Mesh:
    """Uniform nx-by-ny node grid; node k sits at (i*hx, j*hy) with k = j*nx + i."""

    geometry: DeviceGeometry
    nx: int
    ny: int
    node_class: np.ndarray = field(repr=False)  # contact index, NEUMANN, or -2 for interior
    contact_nodes: dict[str, np.ndarray] = field(repr=False)

    @property
    def hx(self) -> float:
        return self.geometry.width / (self.nx - 1)

    @property
    def hy(self) -> float:
        return self.geometry.height / (self.ny - 1)

    @property
    def n_nodes(self) -> int:
        return self.nx * self.ny

    @cached_property
    def x(self) -> np.ndarray:
        return np.tile(np.arange(self.nx) * self.hx, self.ny)

    @cached_property
    def y(self) -> np.ndarray:
        return np.repeat(np.arange(self.ny) * self.hy, self.nx)

    @cached_property
    def boundary(self) -> np.ndarray:
        i = np.tile(np.arange(self.nx), self.ny)
        j = np.repeat(np.arange(self.ny), self.nx)
        return (i == 0) | (i == self.nx - 1) | (j == 0) | (j == self.ny - 1)

    @cached_property
    def dirichlet(self) -> np.ndarray:
        return self.node_class >= 0

    @cached_property
    def free(self) -> np.ndarray:
        """Indices of unknowns: interior and Neumann nodes."""
        return np.flatnonzero(~self.dirichlet)

    @cached_property
    def mass(self) -> np.ndarray:
        """Control-volume areas, i.e. trapezoidal quadrature weights."""
        wx = np.full(self.nx, self.hx)
        wx[[0, -1]] *= 0.5
        wy = np.full(self.ny, self.hy)
        wy[[0, -1]] *= 0.5
        return np.outer(wy, wx).ravel()

    @cached_property
    def edges(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Grid edges (p, q, kappa): kappa = dual face length / edge length."""
        nx, ny, hx, hy = self.nx, self.ny, self.hx, self.hy
        idx = np.arange(self.n_nodes).reshape(ny, nx)
        face_y = np.full(ny, hy)
        face_y[[0, -1]] *= 0.5
        face_x = np.full(nx, hx)
        face_x[[0, -1]] *= 0.5
        ph, qh = idx[:, :-1].ravel(), idx[:, 1:].ravel()
        kh = np.repeat(face_y / hx, nx - 1)
        pv, qv = idx[:-1, :].ravel(), idx[1:, :].ravel()
        kv = np.tile(face_x / hy, ny - 1)
        return (np.concatenate([ph, pv]), np.concatenate([qh, qv]), np.concatenate([kh, kv]))

    def contact_of(self, node: int) -> str | None:
        c = int(self.node_class[node])
        return self.geometry.contacts[c].name if c >= 0 else None


def _snap(a: float, b: float, h: float, n: int) -> tuple[int, int]:
    """Grid indices covered by [a, b]: the nodes inside the span, widened outward to at least two."""
    tol = 1e-9
    lo = max(0, math.ceil(a / h - tol))
    hi = min(n - 1, math.floor(b / h + tol))
    if hi - lo < 1:
        lo = max(0, math.floor(a / h + tol))
        hi = min(n - 1, math.ceil(b / h - tol))
        if hi - lo < 1:
            lo, hi = (lo, lo + 1) if lo + 1 < n else (lo - 1, lo)
    return lo, hi


def build_mesh(geom: DeviceGeometry, nx: int, ny: int) -> Mesh:
    if nx < 3 or ny < 3:
        raise GeometryError(f"need at least 3 nodes per axis, got {nx}x{ny}")
    hx = geom.width / (nx - 1)
    hy = geom.height / (ny - 1)
    boundary = np.zeros(nx * ny, dtype=bool)
    for e in EDGES:
        boundary[_edge_nodes(nx, ny, e)] = True
    node_class = np.where(boundary, NEUMANN, -2)

    contact_nodes: dict[str, np.ndarray] = {}
    owner: dict[int, str] = {}
    for ci, c in enumerate(geom.contacts):
        along = nx if c.edge in ("bottom", "top") else ny
        h = hx if c.edge in ("bottom", "top") else hy
        lo, hi = _snap(c.span[0], c.span[1], h, along)
        nodes = _edge_nodes(nx, ny, c.edge)[lo : hi + 1]
        for k in nodes:
            if int(k) in owner:
                raise GeometryError(
                    f"contacts {owner[int(k)]} and {c.name} touch after snapping to the {nx}x{ny} grid"
                )
            owner[int(k)] = c.name
        node_class[nodes] = ci
        contact_nodes[c.name] = nodes
    node_class.setflags(write=False)
    return Mesh(geom, nx, ny, node_class, contact_nodes)


def boundary_nodes(mesh: Mesh, which: str) -> np.ndarray:
    """Ordered node indices of a contact, of ``"dirichlet"``, or of ``"neumann"``.

    A contact name that is valid but absent from the geometry gives an empty list.
    """
    if which == "neumann":
        return np.flatnonzero(mesh.node_class == NEUMANN)
    if which == "dirichlet":
        return np.flatnonzero(mesh.node_class >= 0)
    if which in CONTACT_NAMES:
        return mesh.contact_nodes.get(which, np.empty(0, dtype=int))
    raise GeometryError(f"unknown boundary selector {which!r}")
