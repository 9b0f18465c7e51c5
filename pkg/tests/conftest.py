import numpy as np
import pytest

from qddopt.device import Device, build_device
from qddopt.doping import BoundaryData
from qddopt.mesh import ContactSpec, DeviceGeometry, build_mesh, default_mesfet_geometry

MESFET_EPS2 = 1.88e-4
MESFET_LAM2 = 0.0017


def strip_geometry(width=1.0, height=1.0, left_voltage=0.0, right_voltage=0.0):
    """Rectangle with Ohmic contacts covering the whole left and right edges."""
    return DeviceGeometry(
        width,
        height,
        (
            ContactSpec("source", "left", (0.0, height), left_voltage),
            ContactSpec("drain", "right", (0.0, height), right_voltage),
        ),
    )


def flat_device(nx=12, ny=None, eps_free_lam2=MESFET_LAM2, rho_D=1.0, V_D=0.0, S_D=0.0, geom=None):
    """Device with C_ref = 1 and constant contact traces, bypassing the MESFET data."""
    geom = geom or default_mesfet_geometry()
    mesh = build_mesh(geom, nx, nx if ny is None else ny)
    d = mesh.dirichlet
    n = mesh.n_nodes
    bc = BoundaryData(np.where(d, rho_D, 0.0), np.where(d, V_D, 0.0), np.where(d, S_D, 0.0), 1.0)
    return Device(mesh, np.ones(n), bc, eps_free_lam2)


@pytest.fixture(scope="session")
def mesfet20():
    return build_device(default_mesfet_geometry(), 20)


@pytest.fixture(scope="session")
def mesfet40():
    return build_device(default_mesfet_geometry(), 40)


ACCEPTANCE_LINES: dict[int, list[tuple[bool, str]]] = {}


def record_criterion(number: int, passed: bool, detail: str) -> None:
    ACCEPTANCE_LINES.setdefault(number, []).append((passed, detail))
    print(f"criterion {number}: {'PASS' if passed else 'FAIL'}  {detail}")


def pytest_terminal_summary(terminalreporter):
    """One line per criterion; a parametrised criterion passes only if every case does."""
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for k in sorted(ACCEPTANCE_LINES):
            cases = ACCEPTANCE_LINES[k]
            ok = all(p for p, _ in cases)
            terminalreporter.write_line(f"criterion {k}: {'PASS' if ok else 'FAIL'}  " + " | ".join(d for _, d in cases))
