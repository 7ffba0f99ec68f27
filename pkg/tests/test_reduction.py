import warnings

import numpy as np
import pytest
from scipy.optimize import minimize

from qbilinear import reduction as R
from qbilinear.errors import NotConverged, RankDeficient, SingularLyapunov, ValidationError
from qbilinear.experiments import morse_basis
from qbilinear.model import Projector
from qbilinear.propagation import ControlField, TimeGrid, propagate_fixed, sin2_envelope
from qbilinear.system import RateModel, build_lvne

from conftest import make_system, random_stable


def kron_lyap(A, N, Q):
    """Dense oracle: solve the vectorised generalized Lyapunov equation."""
    n = A.shape[0]
    I = np.eye(n)
    L = np.kron(I, A) + np.kron(A.conj(), I)
    for Nk in N:
        L = L + np.kron(Nk.conj(), Nk)
    return np.linalg.solve(L, -Q.reshape(-1, order="F")).reshape(n, n, order="F")


# --- Lyapunov and Sylvester ---------------------------------------------------


def test_scalar_and_diagonal_lyapunov():
    assert R.solve_lyapunov(np.array([[-1.0]]), np.array([[1.0]]))[0, 0] == pytest.approx(0.5)
    W = R.solve_lyapunov(np.diag([-1.0, -2.0]), np.eye(2))
    assert np.allclose(W, np.diag([0.5, 0.25]))


def test_random_lyapunov_matches_kronecker(rng):
    A, _, B, _ = random_stable(rng, 6)
    Q = B @ B.T
    W = R.solve_lyapunov(A, Q)
    assert np.allclose(W, kron_lyap(A, [], Q), atol=1e-10)
    assert np.linalg.norm(A @ W + W @ A.conj().T + Q) < 1e-8 * np.linalg.norm(Q)


def test_singular_lyapunov_detected():
    with pytest.raises(SingularLyapunov):
        R.solve_lyapunov(np.diag([1j, -1j]), np.eye(2))


def test_generalized_reduces_to_standard(rng):
    A, _, B, _ = random_stable(rng, 5)
    Q = B @ B.T
    W0 = R.solve_lyapunov(A, Q)
    W1 = R.solve_generalized_lyapunov(A, [np.zeros((5, 5))], Q)
    assert np.allclose(W0, W1, atol=1e-14)


def test_scalar_generalized_lyapunov_closed_form():
    a, nu, b = 1.3, 0.9, 0.7
    W = R.solve_generalized_lyapunov(np.array([[-a]]), [np.array([[nu]])], np.array([[b * b]]))
    assert W[0, 0].real == pytest.approx(b**2 / (2 * a - nu**2), rel=1e-9)


def test_iterative_and_krylov_agree(rng):
    A, N, B, _ = random_stable(rng, 8, m=2, bilinear=0.5)
    Q = B @ B.conj().T
    Wi = R.solve_generalized_lyapunov(A, N, Q, "iterative", 1e-12, 1000)
    Wk = R.solve_generalized_lyapunov(A, N, Q, "krylov", 1e-12, 1000)
    assert np.linalg.norm(Wi - Wk) < 1e-6 * np.linalg.norm(Wi)
    assert np.allclose(Wi, kron_lyap(A, N, Q), atol=1e-9)


def test_generalized_sylvester_cases(rng):
    A, _, B, C = random_stable(rng, 5)
    Ah, _, Bh, _ = random_stable(rng, 3)
    Q = B @ Bh.conj().T
    X = R.solve_generalized_sylvester(A, Ah, [np.zeros((5, 5))], [np.zeros((3, 3))], Q)
    # Kronecker oracle for A X + X Ah^H + Q = 0
    L = np.kron(np.eye(3), A) + np.kron(Ah.conj(), np.eye(5))
    Xk = np.linalg.solve(L, -Q.reshape(-1, order="F")).reshape(5, 3, order="F")
    assert np.allclose(X, Xk, atol=1e-12)
    A, N, B, _ = random_stable(rng, 4)
    Wc = R.solve_generalized_lyapunov(A, N, B @ B.conj().T)
    Xs = R.solve_generalized_sylvester(A, A.copy(), N, [Nk.copy() for Nk in N], B @ B.conj().T)
    assert np.allclose(Xs, Wc, atol=1e-9)
    a, ah, nu, nuh, b, bh = -1.0, -0.7, 0.4, 0.5, 1.1, 0.8
    x = R.solve_generalized_sylvester(np.array([[a]]), np.array([[ah]]), [np.array([[nu]])],
                                      [np.array([[nuh]])], np.array([[b * bh]]))
    assert x[0, 0].real == pytest.approx(-b * bh / (a + ah + nu * nuh), rel=1e-9)


def test_divergent_fixed_point_reports_not_converged():
    with pytest.raises(NotConverged):
        R.solve_generalized_lyapunov(np.array([[-0.1]]), [np.array([[1.0]])], np.array([[1.0]]))


# --- solvability and scaling ----------------------------------------------------


def test_solvability_margin():
    s = R.solvability_check(-np.eye(2), [np.diag([1.0, 0.5])])
    assert (s.lam, s.a, s.margin) == (pytest.approx(1.0), 1.0, pytest.approx(0.5))
    assert R.solvability_check(-np.eye(2), [np.zeros((2, 2))]).margin == 0.0


def test_fixed_point_radius_scales_inverse_square(rng):
    A, N, _, _ = random_stable(rng, 6)
    r1 = R.fixed_point_radius(A, N)
    r3 = R.fixed_point_radius(A, [Nk / 3 for Nk in N])
    assert r3 == pytest.approx(r1 / 9, rel=1e-6)


def test_scaling_keeps_physical_dynamics(rng):
    A, N, B, C = random_stable(rng, 4)
    s = make_system(A, N, B, C, x0=rng.standard_normal(4))
    assert R.scale(s, 1.0) is s
    s6 = R.scale(s, 6.0)
    fld = ControlField.from_functions(lambda t: 0.8 * np.sin(t), 5.0, 0.01)
    grid = TimeGrid(0.5, 0, 10)
    a = propagate_fixed(s, fld, s.x0, grid, 50)
    b = propagate_fixed(s6, fld, s6.x0, grid, 50)
    assert np.allclose(a.states, b.states, atol=1e-12)
    g1, g6 = R.gramians(s), R.gramians(s6)
    assert not np.allclose(g1.W_C, g6.W_C)
    with pytest.raises(ValidationError):
        R.scale(s, 0.5)


# --- stabilization ----------------------------------------------------------------


def small_morse_lvne():
    basis = morse_basis([Projector((i,)) for i in range(4)], v_max=3)
    return build_lvne(basis, RateModel("fermi", 0.002, 0.0, 0, 1))


def test_shift_moves_every_eigenvalue():
    s = small_morse_lvne()
    st = R.stabilize(s, R.Shift(1e-4))
    ev0 = np.sort_complex(np.linalg.eigvals(s.A.toarray()))
    ev1 = np.sort_complex(np.linalg.eigvals(st.system.A.toarray()))
    assert np.allclose(ev1, ev0 - 1e-4, atol=1e-13)


def test_split_removes_zero_eigenvalue():
    s = small_morse_lvne()
    st = R.stabilize(s, R.SplitUnstable(1))
    assert st.M == 1 and abs(st.removed_eigenvalues[0]) < 1e-10
    assert R.max_real_eigenvalue(st.system.A) < 0
    assert st.system.dim == s.dim - 1
    # [S1; S2] inverts [T1, T2]
    S = np.vstack([st.S1, st.S2])
    T = np.hstack([st.T1, st.T2])
    assert np.allclose(S @ T, np.eye(s.dim), atol=1e-10)


def test_split_zero_is_identity(rng):
    A, N, B, C = random_stable(rng, 4)
    st = R.stabilize(make_system(A, N, B, C), R.SplitUnstable(0))
    assert np.allclose(st.system.A.toarray(), A)


# --- balancing and truncation -------------------------------------------------------


def test_balanced_diagonal_case():
    W = np.diag([4.0, 1.0])
    s = make_system(-np.eye(2), [np.zeros((2, 2))], [1.0, 1.0], [[1.0, 1.0]])
    r = R.balance_srbt(s, W, W)
    assert np.allclose(r.hsv, [4.0, 1.0])


def test_srbt_balances_random_pair(rng):
    A, N, B, C = random_stable(rng, 7)
    s = make_system(A, N, B, C)
    g = R.gramians(s)
    r = R.balance_srbt(s, g.W_C, g.W_O)
    Sig = np.diag(r.hsv)
    assert np.linalg.norm(r.S @ g.W_C @ r.S.conj().T - Sig) < 1e-8 * np.linalg.norm(Sig)
    assert np.linalg.norm(r.T.conj().T @ g.W_O @ r.T - Sig) < 1e-8 * np.linalg.norm(Sig)
    ev = np.sort(np.linalg.eigvals(g.W_C @ g.W_O).real)[::-1]
    assert np.allclose(r.hsv**2, ev, rtol=1e-8)


def test_hsv_invariant_under_state_transformation(rng):
    A, N, B, C = random_stable(rng, 6)
    base = R.balance_srbt(make_system(A, N, B, C), tol=1e-13).hsv
    for _ in range(3):
        P = rng.standard_normal((6, 6)) + 3 * np.eye(6)
        Pi = np.linalg.inv(P)
        t = make_system(Pi @ A @ P, [Pi @ Nk @ P for Nk in N], Pi @ B, C @ P)
        assert np.allclose(R.balance_srbt(t, tol=1e-13).hsv, base, rtol=1e-8)


def test_spt_equals_simple_for_block_diagonal_balanced_system(rng):
    d1, d2 = np.array([-1.0, -2.0]), np.array([-3.0, -5.0])
    A = np.diag(np.concatenate([d1, d2]))
    N = np.diag([0.1, 0.2, 0.3, 0.1])
    s = make_system(A, [N], [1.0, 0.7, 0.5, 0.3], [[1.0, 0.8, 0.5, 0.2]])
    r = R.balance_srbt(s)
    # block structure of the balanced realization is not guaranteed; impose it directly
    bal = R.dense(r.stable)
    Ab = bal.A.copy()
    Ab[:2, 2:] = 0
    Ab[2:, :2] = 0
    Nb = bal.N[0].copy()
    Nb[:2, 2:] = 0
    Nb[2:, :2] = 0
    Cb = bal.C.copy()
    blocky = R.ReductionResult(r.S, r.T, r.hsv, make_system(Ab, [Nb], bal.B, Cb), "SRBT")
    a = R.truncate(blocky, 2, "simple").reduced
    b = R.truncate(blocky, 2, "spt").reduced
    for x, y in ((a.A, b.A), (a.N[0], b.N[0])):
        assert np.array_equal(x.toarray(), y.toarray())
    assert np.array_equal(a.C, b.C)


def test_full_order_truncation_is_exact(rng):
    A, N, B, C = random_stable(rng, 6)
    s = make_system(A, N, B, C)
    r = R.balance_srbt(s, tol=1e-13)
    t = R.truncate(r, len(r.hsv), "simple")
    err = R.h2_error(s, t)
    assert abs(err.value) < 1e-10
    with pytest.raises(RankDeficient):
        R.truncate(r, len(r.hsv) + 1)


def test_h2_error_nested_truncations_non_increasing(rng):
    A, N, B, C = random_stable(rng, 10, bilinear=0.2)
    s = make_system(A, N, B, C)
    r = R.balance_srbt(s, tol=1e-13)
    errs = [R.h2_error(s, R.truncate(r, d)).value for d in range(1, 11)]
    assert abs(errs[-1]) < 1e-10
    # balanced truncation is not strictly optimal; allow rounding-level slack
    assert all(b <= a * (1 + 1e-6) + 1e-12 for a, b in zip(errs, errs[1:]))
    h = R.h2_error(s, s)
    assert abs(h.value) < 1e-10 and h.consistent


def test_reduced_split_model_tracks_full_dynamics():
    s = small_morse_lvne()
    st = R.stabilize(s, R.SplitUnstable(1))
    xi = np.sqrt(R.fixed_point_radius(R.dense(st.system).A, R.dense(st.system).N) / 0.5)
    r = R.balance_srbt(R.scale(st, max(xi, 1.0)), max_iter=2000)
    red = R.truncate(r, len(r.hsv)).reduced
    T = 2000.0
    fld = ControlField.from_functions(lambda t: 0.01 * sin2_envelope(t, T) * np.cos(0.0172 * t), T, 1.0)
    grid = TimeGrid(20.0, 0, 100)
    full = propagate_fixed(s, fld, s.x0 + np.eye(s.dim)[0] * 0, grid, 20)
    small = propagate_fixed(red, fld, red.x0, grid, 20)
    assert np.abs(full.outputs - small.outputs).max() < 1e-8
    assert np.abs(full.outputs[:, 1]).max() > 1e-3


# --- BIRKA ----------------------------------------------------------------------------


def test_birka_full_order_is_exact(rng):
    A, N, B, C = random_stable(rng, 5)
    s = make_system(A, N, B, C)
    r = R.birka(s, 5, max_iter=5, solver_tol=1e-13)
    assert abs(R.h2_error(s, r).value) < 1e-8


def test_birka_linear_siso_matches_brute_force():
    p = np.array([-1.0, -3.0])
    b = np.array([1.0, 1.0])
    c = np.array([1.0, 2.0])
    res = c * b
    s = make_system(np.diag(p), [np.zeros((2, 2))], b, [c])
    r = R.birka(s, 1, max_iter=100, conv_tol=1e-12, solver_tol=1e-13)
    got = R.h2_error(s, r).value

    def err(v):
        a, g = -np.exp(v[0]), v[1]
        full = sum(ri * rj / (-pi - pj) for ri, pi in zip(res, p) for rj, pj in zip(res, p))
        cross = sum(ri * g / (-pi - a) for ri, pi in zip(res, p))
        return full - 2 * cross + g * g / (-2 * a)

    best = min((minimize(err, [np.log(a0), g0], method="Nelder-Mead",
                         options=dict(xatol=1e-12, fatol=1e-14, maxiter=4000))
                for a0 in (0.5, 1.5, 3.0) for g0 in (1.0, 3.0)), key=lambda o: o.fun)
    assert got == pytest.approx(best.fun, rel=1e-4)


def test_birka_is_deterministic(rng):
    A, N, B, C = random_stable(rng, 8)
    s = make_system(A, N, B, C)
    a = R.birka(s, 3, seed=7)
    b = R.birka(s, 3, seed=7)
    assert np.array_equal(R.dense(a.stable).A, R.dense(b.stable).A)
    assert np.array_equal(a.S, b.S)


def test_birka_vs_srbt_order_four(rng):
    A, N, B, C = random_stable(rng, 10, bilinear=0.2)
    s = make_system(A, N, B, C)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        e_b = R.h2_error(s, R.birka(s, 4, max_iter=100)).value
    e_s = R.h2_error(s, R.truncate(R.balance_srbt(s), 4)).value
    # H2-optimal target: reported, asserted loosely
    assert e_b <= 1.05 * e_s or e_b < 1e-3 * R.h2_error(s, R.truncate(R.balance_srbt(s), 1)).value
