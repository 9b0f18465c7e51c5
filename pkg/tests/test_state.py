import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from qddopt.device import Device, build_device
from qddopt.discrete import grad_seminorm_sq
from qddopt.doping import BoundaryData
from qddopt.errors import NonConvergenceError, PositivityError
from qddopt.mesh import build_mesh, default_mesfet_geometry
from qddopt.state import (
    EnthalpyModel,
    SolverConfig,
    _solve_V_dd,
    boltzmann_density,
    energy_eval,
    jacobian,
    residual_norm,
    residuals,
    solve_continuity_S,
    solve_dd,
    solve_density_rho,
    solve_poisson_V,
    solve_state,
)

from conftest import MESFET_EPS2, flat_device, strip_geometry

TIGHT = SolverConfig(nonlinear_tol=1e-11)


@pytest.mark.parametrize("eps2", [MESFET_EPS2, 0.0])
def test_trivial_equilibrium(eps2):
    dev = flat_device(20)
    st_ = solve_state(dev, dev.C_ref, eps2)
    np.testing.assert_allclose(st_.rho, 1.0, rtol=0, atol=1e-10)
    np.testing.assert_allclose(st_.V, 0.0, rtol=0, atol=1e-10)
    np.testing.assert_allclose(st_.S, 0.0, rtol=0, atol=1e-10)
    assert st_.residual <= 1e-10
    assert st_.iterations <= 1


def test_poisson_neutral_density_gives_zero_potential(mesfet20):
    dev = mesfet20
    bc = BoundaryData(dev.bc.rho_D, np.zeros(dev.mesh.n_nodes), dev.bc.S_D, 1.0)
    flat = Device(dev.mesh, dev.C_ref, bc, dev.lam2)
    V = solve_poisson_V(flat, np.sqrt(dev.C_ref), dev.C_ref)
    np.testing.assert_allclose(V, 0.0, rtol=0, atol=1e-12)


def test_poisson_superposition(mesfet20):
    dev = mesfet20
    rho = np.sqrt(dev.C_ref) * (1.0 + 0.3 * np.sin(5 * dev.mesh.x))
    f = rho**2 - dev.C_ref
    lhs = solve_poisson_V(dev, rho, dev.C_ref) - solve_poisson_V(dev, np.sqrt(dev.C_ref), dev.C_ref)
    phi = dev.solve_laplace(dev.mass * f / dev.lam2)
    np.testing.assert_allclose(lhs, phi, rtol=0, atol=1e-12 * max(1.0, np.max(np.abs(phi))))


def test_mesfet_potential_bounded_and_mesh_converged():
    vmax = []
    # same physical smoothing width on both grids, so only the discretisation changes
    for n, cells in ((40, 2.0), (80, 2.0 * 79 / 39)):
        dev = build_device(default_mesfet_geometry(), n, smoothing_length=cells)
        st_ = solve_state(dev, dev.C_ref, MESFET_EPS2)
        assert np.all(np.isfinite(st_.V))
        vmax.append(np.max(np.abs(st_.V)))
    assert abs(vmax[0] - vmax[1]) <= 1e-2 * vmax[1]


def test_continuity_constant_trace():
    dev = flat_device(15, S_D=0.7)
    rho = 0.5 + np.random.default_rng(0).random(dev.mesh.n_nodes)
    np.testing.assert_allclose(solve_continuity_S(dev, rho), 0.7, rtol=0, atol=1e-13)


def test_continuity_unit_density_is_laplace(mesfet20):
    dev = mesfet20
    S = solve_continuity_S(dev, np.ones(dev.mesh.n_nodes))
    np.testing.assert_allclose(S, dev.solve_laplace(np.zeros(dev.mesh.n_nodes), dev.bc.S_D), rtol=0, atol=1e-12)


def _strip_device(n, rho_D=1.0, S_left=0.0, S_right=0.0):
    mesh = build_mesh(strip_geometry(), n, 3)
    d = mesh.dirichlet
    S_D = np.where(d, np.where(mesh.x > 0.5, S_right, S_left), 0.0)
    rD = np.where(d, rho_D, 0.0) if np.isscalar(rho_D) else rho_D
    bc = BoundaryData(rD, np.zeros(mesh.n_nodes), S_D, 1.0)
    return Device(mesh, np.ones(mesh.n_nodes), bc, 0.0017)


def test_continuity_1d_log_profile():
    errs = []
    for n in (21, 41, 81):
        dev = _strip_device(n, S_right=1.0)
        x = dev.mesh.x
        S = solve_continuity_S(dev, n=1.0 + x)
        errs.append(np.max(np.abs(S - np.log1p(x) / np.log(2.0))))
    assert errs[0] / errs[1] >= 3.5 and errs[1] / errs[2] >= 3.5


def test_density_equation_unit_solution():
    dev = flat_device(12)
    z = np.zeros(dev.mesh.n_nodes)
    rho = solve_density_rho(dev, z, z, MESFET_EPS2)
    np.testing.assert_allclose(rho, 1.0, rtol=0, atol=1e-12)


def test_density_equation_classical_limit():
    # consistent traces: rho_D = exp((S - V)/2) at both ends, no boundary layers
    errs = []
    for eps2 in (1e-2, 1e-4):
        mesh = build_mesh(strip_geometry(), 101, 3)
        V = 0.8 * mesh.x
        S = np.zeros(mesh.n_nodes)
        target = np.exp((S - V) / 2.0)
        d = mesh.dirichlet
        bc = BoundaryData(np.where(d, target, 0.0), np.where(d, V, 0.0), np.zeros(mesh.n_nodes), 1.0)
        dev = Device(mesh, np.ones(mesh.n_nodes), bc, 0.0017)
        rho = solve_density_rho(dev, V, S, eps2)
        inner = (mesh.x > 0.2) & (mesh.x < 0.8)
        errs.append(np.max(np.abs(rho - target)[inner]))
    assert errs[1] < errs[0]
    assert errs[1] < 1e-4


def test_dd_boltzmann_relation(mesfet20):
    st_ = solve_dd(mesfet20, mesfet20.C_ref)
    f = mesfet20.free
    assert np.max(np.abs(st_.n[f] - np.exp(st_.S - st_.V)[f])) <= 1e-8
    np.testing.assert_array_equal(st_.n[mesfet20.mesh.dirichlet], mesfet20.bc.rho_D[mesfet20.mesh.dirichlet] ** 2)


@pytest.mark.parametrize("eps2", [MESFET_EPS2, 0.0])
def test_state_invariants(mesfet20, eps2):
    dev = mesfet20
    st_ = solve_state(dev, dev.C_ref, eps2)
    d = dev.mesh.dirichlet
    assert st_.residual <= 1e-8
    assert np.min(st_.rho) > SolverConfig().rho_floor
    np.testing.assert_array_equal(st_.rho[d], dev.bc.rho_D[d])
    np.testing.assert_array_equal(st_.V[d], dev.bc.V_D[d])
    np.testing.assert_array_equal(st_.S[d], dev.bc.S_D[d])
    # S maximum principle
    SD = dev.bc.S_D[d]
    assert np.all(st_.S >= SD.min() - 1e-12) and np.all(st_.S <= SD.max() + 1e-12)
    res = residuals(dev, dev.C_ref, eps2, st_.rho, st_.V, st_.S)
    assert residual_norm(dev, res) <= 1e-8


@pytest.mark.parametrize("eps2", [MESFET_EPS2, 0.0])
def test_jacobian_matches_finite_differences(eps2):
    dev = build_device(default_mesfet_geometry(), 8)
    st_ = solve_state(dev, dev.C_ref, eps2)
    f = dev.free
    rng = np.random.default_rng(3)
    J = jacobian(dev, dev.C_ref, eps2, st_.rho, st_.V, st_.S)
    blocks = [st_.V, st_.S] if eps2 == 0.0 else [st_.rho, st_.V, st_.S]
    x0 = np.concatenate([b[f] for b in blocks])
    dx = rng.standard_normal(len(x0)) * 1e-3

    def R(x):
        parts = [b.copy() for b in blocks]
        for k, p in enumerate(parts):
            p[f] = x[k * len(f) : (k + 1) * len(f)]
        if eps2 == 0.0:
            rho = np.sqrt(boltzmann_density(dev, *parts))
            return np.concatenate([r[f] for r in residuals(dev, dev.C_ref, eps2, rho, *parts)])
        return np.concatenate([r[f] for r in residuals(dev, dev.C_ref, eps2, *parts)])

    t = 1e-4
    fd = (R(x0 + t * dx) - R(x0 - t * dx)) / (2 * t)
    np.testing.assert_allclose(J @ dx, fd, rtol=0, atol=1e-7 * np.max(np.abs(fd)))


def test_energy_zero_at_equilibrium():
    dev = flat_device(12)
    n = dev.mesh.n_nodes
    assert energy_eval(dev, np.ones(n), np.zeros(n), np.ones(n), MESFET_EPS2) == pytest.approx(0.0, abs=1e-14)


@settings(max_examples=25, deadline=None)
@given(st.integers(min_value=0, max_value=2**32 - 1), st.floats(min_value=1e-8, max_value=1e-1))
def test_energy_quantum_term(seed, eps2):
    dev = build_device(default_mesfet_geometry(), 10)
    rng = np.random.default_rng(seed)
    rho = 0.1 + rng.random(dev.mesh.n_nodes)
    S = rng.standard_normal(dev.mesh.n_nodes)
    diff = energy_eval(dev, rho, S, dev.C_ref, eps2) - energy_eval(dev, rho, S, dev.C_ref, 0.0)
    expected = eps2 * grad_seminorm_sq(rho, dev.mesh)
    assert diff == pytest.approx(expected, rel=1e-8, abs=1e-13)
    assert diff >= 0.0


def test_converged_density_minimises_energy(mesfet20):
    dev = mesfet20
    st_ = solve_state(dev, dev.C_ref, MESFET_EPS2, TIGHT)
    E0 = energy_eval(dev, st_.rho, st_.S, dev.C_ref, MESFET_EPS2)
    rng = np.random.default_rng(7)
    for _ in range(20):
        delta = np.where(dev.mesh.dirichlet, 0.0, rng.uniform(-1.0, 1.0, dev.mesh.n_nodes))
        # relative perturbation keeps rho positive in the depleted region
        E = energy_eval(dev, st_.rho * (1.0 + 1e-2 * delta), st_.S, dev.C_ref, MESFET_EPS2)
        assert E0 <= E


def test_energy_gradient_is_density_residual(mesfet20):
    dev = mesfet20
    st_ = solve_state(dev, dev.C_ref, MESFET_EPS2)
    rho = st_.rho * (1.0 + 0.05 * np.sin(7 * dev.mesh.y))
    rho[dev.mesh.dirichlet] = st_.rho[dev.mesh.dirichlet]
    V = solve_poisson_V(dev, rho, dev.C_ref)
    Rr = residuals(dev, dev.C_ref, MESFET_EPS2, rho, V, st_.S)[0]
    d = np.where(dev.mesh.dirichlet, 0.0, np.cos(3 * dev.mesh.x))
    t = 1e-6
    fd = (energy_eval(dev, rho + t * d, st_.S, dev.C_ref, MESFET_EPS2)
          - energy_eval(dev, rho - t * d, st_.S, dev.C_ref, MESFET_EPS2)) / (2 * t)
    assert fd == pytest.approx(2.0 * Rr @ d, rel=1e-6)


@pytest.mark.parametrize("eps2", [1.88e-12, 1.88e-14])
def test_quantum_density_smoother_than_classical(mesfet20, eps2):
    dev = mesfet20
    st_ = solve_state(dev, dev.C_ref, eps2, TIGHT)
    V, _ = _solve_V_dd(dev, dev.C_ref, st_.V, st_.S, TIGHT)
    rho_dd = np.sqrt(boltzmann_density(dev, V, st_.S))
    assert grad_seminorm_sq(st_.rho, dev.mesh) <= grad_seminorm_sq(rho_dd, dev.mesh)


def test_warm_start_reduces_work(mesfet20):
    dev = mesfet20
    base = solve_state(dev, dev.C_ref, MESFET_EPS2)
    warm = solve_state(dev, dev.C_ref, 1.01 * MESFET_EPS2, warm_start=base)
    cold = solve_state(dev, dev.C_ref, 1.01 * MESFET_EPS2)
    assert warm.iterations + warm.newton_iterations < cold.iterations + cold.newton_iterations


def test_floor_violation_raises(mesfet20):
    with pytest.raises(PositivityError):
        solve_state(mesfet20, mesfet20.C_ref, 0.0, SolverConfig(rho_floor=0.5))


def test_iteration_cap_raises(mesfet20):
    cfg = SolverConfig(max_gummel=1, max_newton=1, newton_switch=1e-12)
    with pytest.raises(NonConvergenceError):
        solve_state(mesfet20, mesfet20.C_ref, 0.0, cfg)


def test_enthalpy_cap_warns():
    dev = flat_device(8)
    n = dev.mesh.n_nodes
    with pytest.warns(RuntimeWarning):
        EnthalpyModel(cap=0.5).check(np.ones(n))


def test_solver_config_validation():
    with pytest.raises(ValueError):
        SolverConfig(damping=0.0)
    with pytest.raises(ValueError):
        SolverConfig(nonlinear_tol=-1.0)
    with pytest.raises(ValueError):
        SolverConfig(max_gummel=0)
