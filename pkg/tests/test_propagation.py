import numpy as np
import pytest

from qbilinear.errors import ValidationError
from qbilinear.experiments import morse_basis, morse_lvne
from qbilinear.model import EnergyBasisSystem, Observable
from qbilinear.propagation import (ControlField, Sin2Pulse, TimeGrid, crossover_time,
                                   evaluate_outputs, propagate_adaptive, propagate_fixed,
                                   sin2_envelope)
from qbilinear.system import Pure, RateModel, build_lvne, build_tdse, initial_state, vec

from conftest import make_system

SX = np.array([[0.0, 1.0], [1.0, 0.0]])
GAMMA, OMEGA = 0.05, 0.3


def decay_system():
    basis = EnergyBasisSystem([0.0, OMEGA], [SX], SX,
                              [Observable("prj", np.diag([1.0, 0.0]), "p0"),
                               Observable("prj", np.diag([0.0, 1.0]), "p1")])
    return build_lvne(basis, RateModel("constant", GAMMA, 0.0, 0, 1))


def test_stationary_eigenstate():
    s = build_tdse(morse_basis())
    grid = TimeGrid(100.0, 0, 50)
    tr = propagate_adaptive(s, None, initial_state(Pure(3), s), grid, 1e-8)
    assert np.allclose(tr.outputs[:, 3], 1.0, atol=1e-10)
    assert np.allclose(tr.outputs[:, :3], 0.0, atol=1e-10)


def test_two_level_decay_matches_exponential():
    s = decay_system()
    grid = TimeGrid(2.0, 0, 50)
    tr = propagate_adaptive(s, None, initial_state(Pure(1), s), grid, 1e-8)
    assert np.allclose(tr.outputs[:, 1], np.exp(-GAMMA * grid.times), rtol=1e-6, atol=1e-9)


def test_rk4_agrees_with_adaptive_under_a_field():
    s = decay_system()
    grid = TimeGrid(2.0, 0, 50)
    # fixed-step RK samples the field at its substeps; give both the same samples
    fld = ControlField.from_functions(Sin2Pulse(0.05, OMEGA, 100.0), 100.0, 0.1)
    x0 = initial_state(Pure(0), s)
    a = propagate_adaptive(s, fld, x0, grid, 1e-10)
    b = propagate_fixed(s, fld, x0, grid, 20)
    assert np.abs(a.outputs - b.outputs).max() < 1e-6
    assert a.outputs[:, 1].max() > 0.05  # the pulse actually drives the system


def test_zero_dynamics_keep_state():
    s = make_system(np.zeros((3, 3)), [np.zeros((3, 3))], np.zeros(3), np.eye(3))
    x0 = np.array([1.0, 2.0, -1.0j])
    tr = propagate_fixed(s, None, x0, TimeGrid(0.1, 0, 10), 3)
    assert np.all(tr.states == x0)


def test_single_rk4_step_is_fourth_order_taylor():
    lam = -0.3 + 0.7j
    h = 0.4
    s = make_system([[lam]], [[[0.0]]], [0.0], [[1.0]])
    tr = propagate_fixed(s, None, np.array([1.0 + 0j]), TimeGrid(h, 0, 1), 1)
    z = lam * h
    assert tr.states[-1, 0] == pytest.approx(1 + z + z**2 / 2 + z**3 / 6 + z**4 / 24, abs=1e-15)


def test_rk2_is_second_order():
    s = decay_system()
    fld = ControlField.from_functions(Sin2Pulse(0.05, OMEGA, 100.0), 100.0, 0.05)
    x0 = initial_state(Pure(1), s)
    ref = propagate_fixed(s, fld, x0, TimeGrid(10.0, 0, 10), 200).states[-1]
    errs = [np.abs(propagate_fixed(s, fld, x0, TimeGrid(10.0, 0, 10), k, "rk2").states[-1] - ref).max()
            for k in (16, 32)]
    assert 3.0 < errs[0] / errs[1] < 5.0


def test_outputs_of_equilibrium_and_ground_state():
    s = morse_lvne()
    y = evaluate_outputs(s, np.zeros(s.dim))
    assert np.allclose(y, np.real(s.C @ s.x_e))
    assert y[0] == pytest.approx(1.0)
    t = build_tdse(morse_basis())
    assert evaluate_outputs(t, np.zeros(t.dim))[0] == pytest.approx(1.0)


def test_lvne_populations_sum_to_one(rng):
    s = morse_lvne()
    M = rng.standard_normal((22, 22)) + 1j * rng.standard_normal((22, 22))
    rho = M @ M.conj().T
    rho /= np.trace(rho)
    y = evaluate_outputs(s, vec(rho, "df") - s.x_e)
    assert y.sum() == pytest.approx(1.0, abs=1e-12)


def test_reltol_bounds():
    s = decay_system()
    with pytest.raises(ValidationError):
        propagate_adaptive(s, None, s.x0, TimeGrid(1.0, 0, 2), 0.1)


def test_field_channel_mismatch():
    s = decay_system()
    two = ControlField(0.0, 1.0, np.zeros((2, 3)))
    with pytest.raises(ValidationError):
        propagate_fixed(s, two, s.x0, TimeGrid(1.0, 0, 2))


def test_sin2_envelope_and_pulse():
    t = np.linspace(-1, 3, 9)
    env = sin2_envelope(t, 2.0)
    assert env[0] == 0 and env[-1] == 0 and env[4] == pytest.approx(1.0)
    p = Sin2Pulse(2.0, 0.0, 2.0)
    assert p(1.0) == pytest.approx(2.0)


def test_crossover_time_interpolates():
    t = np.array([0.0, 1.0, 2.0])
    P = np.array([[0.0, 1.0], [0.4, 0.6], [0.8, 0.2]])
    assert crossover_time(t, P, 0) == pytest.approx(1.0 + 0.2 / 0.8)
    assert crossover_time(t, P[:, ::-1], 0) == 0.0
    assert crossover_time(t[:2], P[:2], 0) is None


def test_field_resampling_and_csv(tmp_path):
    fld = ControlField.from_functions(lambda t: np.sin(t), 1.0, 0.1)
    fine = fld.resampled(1.0, 0.05)
    assert fine.values.shape == (1, 21)
    assert fine.at([0.5])[0, 0] == pytest.approx(np.sin(0.5), abs=1e-15)
    fld.write_csv(tmp_path / "u.csv")
    lines = (tmp_path / "u.csv").read_text().splitlines()
    assert lines[0] == "t,u_1" and len(lines) == 12
    assert float(lines[3].split(",")[1]) == np.sin(0.2)
