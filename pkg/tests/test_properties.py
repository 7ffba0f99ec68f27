"""Randomised invariants of the generators, propagators and reductions."""

import numpy as np
import pytest
from hypothesis import HealthCheck, given, settings, strategies as st

from qbilinear import _accel, kernels
from qbilinear import reduction as R
from qbilinear.propagation import ControlField, TimeGrid, propagate_fixed
from qbilinear.system import (DephasingModel, RateModel, build_lvne, build_tdse, density_matrix,
                              initial_state, relaxation_rates, trace_functional, Pure)

from conftest import make_system, random_stable, toy_basis

SETTINGS = settings(max_examples=15, deadline=None,
                    suppress_health_check=[HealthCheck.function_scoped_fixture])

levels = st.lists(st.floats(0.2, 1.5), min_size=2, max_size=4).map(
    lambda gaps: tuple(np.concatenate([[0.0], np.cumsum(gaps)])))


def random_field(seed, amp, t_end, dt):
    r = np.random.default_rng(seed)
    w, ph = r.uniform(0.3, 2.0, 3), r.uniform(0, 2 * np.pi, 3)
    return ControlField.from_functions(
        lambda t: amp * sum(np.cos(wi * t + pi) for wi, pi in zip(w, ph)) / 3, t_end, dt)


@SETTINGS
@given(levels, st.floats(0.0, 1.0), st.floats(0.001, 0.05), st.floats(0.0, 0.3),
       st.integers(0, 2**31))
def test_lvne_keeps_trace_and_positivity(E, temp, rate, amp, seed):
    basis = toy_basis(E, coupling=0.3)
    s = build_lvne(basis, RateModel("einstein", rate, temp, 0, 1),
                   DephasingModel("constant", rate=rate / 2))
    assert s.equilibrium_residual() < 1e-12
    assert np.abs(trace_functional(s) @ s.A).max() < 1e-13
    G = relaxation_rates(basis, RateModel("einstein", rate, temp, 0, 1))
    if temp > 0:
        for i in range(len(E)):
            for j in range(i + 1, len(E)):
                if G[i, j] > 0:
                    assert G[j, i] / G[i, j] == pytest.approx(np.exp(-(E[j] - E[i]) / temp), rel=1e-10)
    fld = random_field(seed, amp, 20.0, 0.01)
    tr = propagate_fixed(s, fld, initial_state(Pure(len(E) - 1), s), TimeGrid(2.0, 0, 10), 200)
    for x in tr.states:
        rho = density_matrix(s, x)
        assert abs(np.trace(rho) - 1) < 1e-10
        assert np.allclose(rho, rho.conj().T, atol=1e-12)
        assert np.linalg.eigvalsh(rho).min() > -1e-8


@SETTINGS
@given(levels, st.floats(0.0, 0.5), st.integers(0, 2**31))
def test_tdse_keeps_norm(E, amp, seed):
    s = build_tdse(toy_basis(E))
    fld = random_field(seed, amp, 20.0, 0.01)
    tr = propagate_fixed(s, fld, initial_state(Pure(0), s), TimeGrid(2.0, 0, 10), 200)
    norms = np.linalg.norm(tr.states + s.x_e, axis=1)
    assert np.abs(norms - 1).max() < 1e-8


@SETTINGS
@given(st.integers(2, 7), st.integers(0, 2**31))
def test_self_h2_error_vanishes_and_hsv_are_invariant(n, seed):
    rng = np.random.default_rng(seed)
    A, N, B, C = random_stable(rng, n)
    s = make_system(A, N, B, C)
    assert abs(R.h2_error(s, s).value) < 1e-9 * max(1.0, R.h2_error(s, s).reference)
    P = rng.standard_normal((n, n)) + n * np.eye(n)
    Pi = np.linalg.inv(P)
    t = make_system(Pi @ A @ P, [Pi @ N[0] @ P], Pi @ B, C @ P)
    h1 = R.balance_srbt(s, tol=1e-13).hsv
    h2 = R.balance_srbt(t, tol=1e-13).hsv
    assert np.allclose(h1, h2, rtol=1e-7, atol=1e-12 * h1[0])


@pytest.fixture
def backends(monkeypatch):
    def run(fn):
        out = {}
        for flag in (True, False):
            monkeypatch.setattr(_accel, "USE_NUMBA", flag)
            out[flag] = fn()
        return out[True], out[False]
    return run


@SETTINGS
@given(st.integers(2, 6), st.integers(0, 2**31))
def test_numba_and_numpy_backends_agree(backends, n, seed):
    rng = np.random.default_rng(seed)
    A, N, B, _ = random_stable(rng, n, m=2)
    ops = kernels.Operators(A, N, B.T)
    x0 = rng.standard_normal(n) + 1j * rng.standard_normal(n)
    u = 0.3 * rng.standard_normal((2, 41))
    a, b = backends(lambda: kernels.rk4_propagate(ops, x0, u, 0.05, every=4))
    assert np.allclose(a, b, rtol=1e-12, atol=1e-12)
    a, b = backends(lambda: kernels.dopri_propagate(ops, x0, u, 0.0, 0.05, np.linspace(0, 2, 5),
                                                    1e-9, 1e-12, 0.01, 1e-10)[0])
    # the field has kinks at its samples, so step acceptance can flip on last-bit
    # differences; the two runs agree to the accuracy of the integration
    assert np.abs(a - b).max() < 1e-5 * np.abs(a).max()
    partner = kernels.rk4_propagate(ops, 0.5 * x0, u, 0.05)
    coef = -np.abs(rng.standard_normal((2, 41)))
    for prop, backward in ((ops, False), (ops.adjoint(), True)):
        sweep = lambda: kernels.oct_sweep(prop, ops, x0, partner, u, coef, 1.0, 0.05, backward)
        (fa, sa), (fb, sb) = backends(sweep)
        assert np.allclose(fa, fb, rtol=1e-10, atol=1e-12)
        assert np.allclose(sa, sb, rtol=1e-10, atol=1e-12)
