import numpy as np
import pytest

from qbilinear.control import (OctConfig, backward_propagate, cost_functional, evaluate_functionals,
                               field_derivative, field_update, forward_propagate, iterate,
                               target_functional, terminal_costate)
from qbilinear.errors import ShapeViolation, ValidationError
from qbilinear.experiments import morse_basis
from qbilinear.model import Projector
from qbilinear.propagation import ControlField, TimeGrid, sin2_envelope
from qbilinear.system import Pure, RateModel, build_lvne, build_tdse, initial_state

from conftest import make_system, toy_basis

T_END = 60.0
GRID = TimeGrid(0.5, 0, 120)


def toy_tdse():
    return build_tdse(toy_basis())


def guess(amp=0.05, omega=1.0, shaped=True):
    env = lambda t: sin2_envelope(t, T_END)
    return ControlField.from_functions(lambda t: amp * env(t) * np.cos(omega * t), T_END, 0.05,
                                       shapes=env if shaped else None)


def test_backward_propagation_conserves_norm_for_tdse():
    s = build_tdse(morse_basis([Projector((i,)) for i in range(3)]))
    fld = ControlField.from_functions(lambda t: 0.01 * np.cos(0.0172 * t), 2000.0, 5.0)
    zT = np.zeros(22, complex)
    zT[1] = 1.0
    z = backward_propagate(s, fld, zT, TimeGrid(20.0, 0, 100), 20)
    assert abs(np.linalg.norm(z[0]) - 1.0) < 1e-8


def test_field_free_costate_is_phase_rotation():
    s = toy_tdse()
    fld = ControlField.zero(1, T_END)
    zT = np.array([0.3, 0.5j, -0.2])
    z = backward_propagate(s, fld, zT, GRID, 40)
    E = s.meta["energies"]
    expected = zT * np.exp(1j * np.asarray(E) * T_END)
    assert np.allclose(z[0], expected, atol=1e-9)
    assert np.allclose(np.abs(z), np.abs(zT), atol=1e-9)


def test_adjoint_pairing_is_conserved(rng):
    n = 4
    A = rng.standard_normal((n, n)) + 1j * rng.standard_normal((n, n)) - 2 * np.eye(n)
    N = rng.standard_normal((n, n)) + 1j * rng.standard_normal((n, n))
    s = make_system(0.3 * A, [0.3 * N], np.zeros(n), np.eye(n))
    fld = ControlField.from_functions(lambda t: 0.5 * np.sin(0.3 * t), 10.0, 0.01)
    grid = TimeGrid(0.5, 0, 20)
    x = forward_propagate(s, fld, rng.standard_normal(n) + 0j, grid, 50)
    z = backward_propagate(s, fld, rng.standard_normal(n) + 1j * rng.standard_normal(n), grid, 50)
    pair = np.einsum("ti,ti->t", z.conj(), x)
    assert np.abs(pair - pair[0]).max() < 1e-8 * np.abs(pair[0])


def test_field_update_trivial_cases(rng):
    s = toy_tdse()
    psi = rng.standard_normal((5, 3)) + 1j * rng.standard_normal((5, 3))
    x = psi - s.x_e
    u = field_update(1j * psi, x, s, np.ones((1, 5)), 1.0)
    N = s.N[0].toarray()
    assert np.allclose(u[0], np.real(np.einsum("ti,ij,tj->t", psi.conj(), N, psi)))
    assert np.all(field_update(1j * psi, x, s, np.zeros((1, 5)), 1.0) == 0)


def test_field_update_direct_formula(rng):
    s = toy_tdse()
    x = rng.standard_normal((4, 3)) + 1j * rng.standard_normal((4, 3))
    z = rng.standard_normal((4, 3)) + 1j * rng.standard_normal((4, 3))
    shape = rng.random((1, 4))
    N = s.N[0].toarray()
    psi = x + s.x_e
    expected = [-(shape[0, t] / 0.7) * np.imag(z[t].conj() @ N @ psi[t]) for t in range(4)]
    assert np.allclose(field_update(z, x, s, shape, 0.7)[0], expected, atol=1e-14)
    F = [np.vdot(psi[t], z[t]) for t in range(4)]
    expected = [-(shape[0, t] / 0.7) * np.imag(F[t] * (z[t].conj() @ N @ psi[t])) for t in range(4)]
    assert np.allclose(field_update(z, x, s, shape, 0.7, "J1c", "every")[0], expected, atol=1e-14)


def test_field_derivative_commutator():
    lam = np.array([-0.1j, -0.5j, -1.3j])
    N = np.array([[0, 1, 2], [1, 0, 3], [2, 3, 0]], complex)
    s = make_system(np.diag(lam), [N], np.zeros(3), np.eye(3))
    x = np.eye(3)
    z = np.eye(3)
    # rows t pick out (z_t)^H (NA - AN) x_t = (lam_j - lam_i) N_ij with i = j = t, hence 0
    assert np.allclose(field_derivative(z, x, s, np.ones((1, 3)), 1.0), 0)
    ei, ej = np.eye(3)[[0]], np.eye(3)[[2]]
    val = field_derivative(ei, ej, s, np.ones((1, 1)), 1.0)[0, 0]
    assert val == pytest.approx(-np.imag((lam[2] - lam[0]) * N[0, 2]))
    commuting = make_system(np.diag(lam), [np.diag([1.0, 2.0, 3.0])], np.zeros(3), np.eye(3))
    assert np.allclose(field_derivative(z + 1j, x + 2, commuting, np.ones((1, 3)), 1.0), 0)


def test_field_derivative_matches_finite_difference():
    s = toy_tdse()
    fld = ControlField.zero(1, T_END)
    x = forward_propagate(s, fld, initial_state(Pure(1), s), GRID, 10)
    z = backward_propagate(s, fld, np.array([0.2, 0.1j, 1.0]), GRID, 10)
    shape = np.ones((1, len(x)))
    u = field_update(z, x, s, shape, 1.0)[0]
    du = field_derivative(z, x, s, shape, 1.0)[0]
    h = GRID.delta / 10
    assert np.allclose(np.gradient(u, h)[1:-1], du[1:-1], atol=1e-3 * np.abs(du).max())


def test_functional_pieces():
    s = toy_tdse()
    h = 0.1
    u0 = np.zeros((1, 11))
    assert cost_functional(u0, np.ones((1, 11)), 1.0, h) == 0.0
    with pytest.raises(ShapeViolation):
        cost_functional(np.ones((1, 11)), np.zeros((1, 11)), 1.0, h)
    cfg = OctConfig(target=3, functional="J1c")
    x_T = np.array([0.0, 0.0, 1.0]) - s.x_e
    assert target_functional(s, x_T, cfg) == pytest.approx(1.0)
    assert np.allclose(terminal_costate(s, x_T, cfg), [0, 0, 1])
    fld = guess()
    K = 20
    x = forward_propagate(s, fld, s.x0, GRID, K)
    z = backward_propagate(s, fld, terminal_costate(s, x[-1], OctConfig(2)), GRID, K)
    u = fld.at(GRID.substep_times(K))
    shape = fld.shape_at(GRID.substep_times(K))
    J1, J2, J3 = evaluate_functionals(s, x, u, z, shape, (1.0,), OctConfig(2), GRID.delta / K)
    size = np.linalg.norm(x + s.x_e, axis=1).max() * np.linalg.norm(z, axis=1).max()
    assert abs(J3) < 1e-6 * size
    assert J2 > 0


@pytest.mark.parametrize("eta,zeta", [(1.0, 1.0), (0.0, 1.0), (1.5, 0.5)])
def test_iteration_is_monotone(eta, zeta):
    s = toy_tdse()
    cfg = OctConfig(target=2, functional="J1a", alpha=(0.05,), eta=eta, zeta=zeta, max_iter=8,
                    tolerance=1e-12, substeps=10)
    rep = iterate(s, guess(), cfg, GRID)
    J = np.array(rep.J)
    assert np.all(np.diff(J) >= -1e-8)
    assert rep.yields[-1] > rep.yields[0] + 0.1
    assert len(rep.J1) == len(rep.J2) == len(rep.J3) == rep.iterations + 1


def test_j1c_monotone_and_shape_enforced():
    s = toy_tdse()
    cfg = OctConfig(target=3, functional="J1c", alpha=(0.05,), max_iter=6, substeps=10)
    rep = iterate(s, guess(), cfg, GRID)
    assert np.all(np.diff(rep.J) >= -1e-8)
    edges = rep.field.shape[0] == 0
    assert np.any(edges) and np.all(rep.field.values[0][edges] == 0)


def test_j1b_on_open_system_improves_yield():
    s = build_lvne(toy_basis(), RateModel("einstein", 0.002, 0.0, 0, 1))
    cfg = OctConfig(target=2, functional="J1b", alpha=(0.05,), max_iter=4, substeps=10)
    rep = iterate(s, guess(), cfg, GRID, x0=initial_state(Pure(0), s))
    assert rep.yields[-1] > rep.yields[0] + 0.1


def test_iterate_rejects_bad_input():
    s = toy_tdse()
    with pytest.raises(ValidationError):
        iterate(s, ControlField.zero(1, T_END), OctConfig(2), GRID)
    lv = build_lvne(toy_basis(), RateModel("einstein", 0.002, 0.0, 0, 1))
    with pytest.raises(ValidationError):
        iterate(lv, guess(), OctConfig(2, "J1a", max_iter=1), GRID)
    for bad in (dict(eta=3.0), dict(tolerance=0.0), dict(functional="J2")):
        with pytest.raises(ValidationError):
            OctConfig(2, **bad)


def _objective(s, u, grid, K, alpha, target):
    x = forward_propagate(s, ControlField(0.0, grid.delta / K, u), s.x0, grid, K)
    cfg = OctConfig(target)
    return target_functional(s, x[-1], cfg) - cost_functional(u, np.ones_like(u), alpha, grid.delta / K)


def test_gradient_of_stationarity_condition(rng):
    """Variation implied by the field formula vs central differences of J."""
    s = toy_tdse()
    K, alpha, target = 20, 0.3, 2
    ts = GRID.substep_times(K)
    h = GRID.delta / K
    u = np.array([0.08 * np.sin(np.pi * ts / T_END) ** 2 * np.cos(1.05 * ts)])
    fld = ControlField(0.0, h, u)
    x = forward_propagate(s, fld, s.x0, GRID, K)
    z = backward_propagate(s, fld, terminal_costate(s, x[-1], OctConfig(target)), GRID, K)
    psi = x + s.x_e
    N = s.N[0].toarray()
    im = np.imag(np.einsum("ti,ij,tj->t", z.conj(), N, psi))
    grad = -2.0 * (alpha * u[0] + im)  # dJ/du(t); zero where the field formula holds
    for t0 in rng.uniform(5.0, T_END - 5.0, size=5):
        bump = np.exp(-((ts - t0) / 1.0) ** 2)
        eps = 1e-4
        jp = _objective(s, u + eps * bump, GRID, K, alpha, target)
        jm = _objective(s, u - eps * bump, GRID, K, alpha, target)
        fd = (jp - jm) / (2 * eps)
        adj = np.sum(grad * bump) * h
        assert abs(fd - adj) < 1e-3 * abs(fd)
