import numpy as np
import pytest

from qbilinear import constants as c
from qbilinear.errors import BoundStateUnavailable, FormatError, IoError, ValidationError
from qbilinear.experiments import MORSE, MORSE_DIPOLE, MORSE_GRID, double_well_levels
from qbilinear.model import (Amo, Gaussian, GridSpec, Overlap, Projector, Taylor, build_energy_basis,
                             export_energy_basis, import_energy_basis, matrix_elements,
                             solve_bound_states)


def test_morse_has_22_bound_states():
    E, U = solve_bound_states(MORSE_GRID, MORSE)
    assert len(E) == 22
    assert MORSE.n_bound(MORSE_GRID.mass) == 22
    assert E[-1] < MORSE.d_e


def test_morse_energies_match_closed_form():
    E, _ = solve_bound_states(MORSE_GRID, MORSE)
    exact = MORSE.analytic_energies(MORSE_GRID.mass, 22)
    # the topmost level feels the grid edge at 10 bohr
    assert np.max(np.abs(E[:21] - exact[:21]) / exact[:21]) < 1e-6
    wide = GridSpec(531, 0.7, 20.0, MORSE_GRID.mass)
    E, _ = solve_bound_states(wide, MORSE)
    assert np.max(np.abs(E - exact) / exact) < 1e-9


def test_harmonic_spectrum():
    m, w = 1.0, 0.5
    grid = GridSpec(128, -12.0, 12.0, m)
    E, _ = solve_bound_states(grid, Taylor((0.0, m * w**2)), 0, 7)
    assert np.allclose(E, w * (np.arange(8) + 0.5), atol=1e-8)


def test_requesting_unbound_state_raises():
    with pytest.raises(BoundStateUnavailable):
        solve_bound_states(MORSE_GRID, MORSE, 0, 25)


def test_confining_potential_needs_vmax():
    with pytest.raises(ValidationError):
        solve_bound_states(GridSpec(64, -5, 5, 1.0), Taylor((0.0, 1.0)))


def test_eigenvectors_orthonormal_on_grid():
    E, U = solve_bound_states(MORSE_GRID, MORSE, 0, 9)
    overlap = U.T @ U * MORSE_GRID.dx
    assert np.allclose(overlap, np.eye(10), atol=1e-10)


def test_projector_and_overlap_elements():
    _, U = solve_bound_states(MORSE_GRID, MORSE)
    P = matrix_elements(U, Projector((1,)), MORSE_GRID)
    assert P.shape == (22, 22) and P[1, 1] == 1.0 and P.sum() == 1.0
    v = matrix_elements(U, Overlap((0,)), MORSE_GRID)
    assert np.array_equal(v, np.eye(22)[0])
    with pytest.raises(IndexError):
        matrix_elements(U, Projector((30,)), MORSE_GRID)


def test_gaussian_amo_is_hermitian_positive_diagonal():
    _, U = solve_bound_states(MORSE_GRID, MORSE)
    G = matrix_elements(U, Amo(Gaussian(2.5, 1 / 50)), MORSE_GRID)
    assert np.allclose(G, G.T)
    assert np.all(np.diag(G) >= 0)


def test_dipole_elements_match_direct_quadrature():
    E, U = solve_bound_states(MORSE_GRID, MORSE, 0, 3)
    mu = matrix_elements(U, MORSE_DIPOLE, MORSE_GRID)
    x = MORSE_GRID.x
    direct = np.sum(U[:, 0] * MORSE_DIPOLE(x) * U[:, 1]) * MORSE_GRID.dx
    assert mu[0, 1] == pytest.approx(direct, rel=1e-12)
    # transition dipole of the OH model is of order 0.1 a.u.
    assert 0.01 < abs(mu[0, 1]) < 1.0


def test_energy_basis_roundtrip(tmp_path):
    basis = build_energy_basis(MORSE_GRID, MORSE, [MORSE_DIPOLE], Taylor((1.0,)),
                               [Projector((0,)), Overlap((1,))], 0, 5)
    export_energy_basis(basis, tmp_path / "tise")
    back = import_energy_basis(tmp_path / "tise")
    assert np.array_equal(back.energies, basis.energies)
    assert np.array_equal(back.dipole[0], basis.dipole[0])
    assert np.array_equal(back.sbc, basis.sbc)
    assert [o.kind for o in back.observables] == ["prj", "ovl"]


def test_missing_archive_is_io_error(tmp_path):
    with pytest.raises(IoError):
        import_energy_basis(tmp_path / "nothing")


def test_truncated_blob_is_format_error(tmp_path):
    basis = build_energy_basis(MORSE_GRID, MORSE, [MORSE_DIPOLE], None, [], 0, 5)
    export_energy_basis(basis, tmp_path / "tise")
    blob = tmp_path / "tise" / "dipole_0.bin"
    blob.write_bytes(blob.read_bytes()[:-8])
    with pytest.raises(FormatError):
        import_energy_basis(tmp_path / "tise")


def test_double_well_level_structure():
    left, right, deloc = double_well_levels()
    assert (len(left), len(right), len(deloc)) == (6, 5, 10)


def test_unit_constants():
    assert c.PS == pytest.approx(41341.37, rel=1e-6)
    assert 1.0 / c.PS * c.PS == 1.0
