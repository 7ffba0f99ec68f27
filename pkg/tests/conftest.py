import numpy as np
import pytest

from qbilinear.model import EnergyBasisSystem, Observable
from qbilinear.system import BilinearSystem


def make_system(A, N, B, C, x0=None, kind="external"):
    """Homogeneous-in-x_e bilinear system from dense blocks (B holds b_k as columns)."""
    A = np.asarray(A, dtype=complex)
    n = A.shape[0]
    N = [np.asarray(Nk, dtype=complex) for Nk in N]
    B = np.asarray(B, dtype=complex).reshape(n, len(N))
    x0 = np.zeros(n, complex) if x0 is None else np.asarray(x0, complex)
    return BilinearSystem(kind, A, N, B.T, np.atleast_2d(C), [], np.zeros(n, complex), x0)


def random_stable(rng, n, m=1, p=1, bilinear=0.3, complex_=True):
    """Random bilinear system whose Gramians exist (small N relative to the stability margin)."""
    X = rng.standard_normal((n, n)) + (1j * rng.standard_normal((n, n)) if complex_ else 0)
    A = X - (np.max(np.linalg.eigvals(X).real) + 1.0 + rng.random()) * np.eye(n)
    N = []
    for _ in range(m):
        Nk = rng.standard_normal((n, n)) + (1j * rng.standard_normal((n, n)) if complex_ else 0)
        N.append(bilinear * Nk / np.linalg.norm(Nk, 2))
    B = rng.standard_normal((n, m))
    C = rng.standard_normal((p, n))
    return A, N, B, C


def toy_basis(energies=(0.0, 1.0, 2.1), coupling=0.4):
    """Small energy basis with nearest-neighbour dipole and one projector per level."""
    E = np.asarray(energies, float)
    n = len(E)
    mu = np.zeros((n, n))
    for i in range(n - 1):
        mu[i, i + 1] = mu[i + 1, i] = coupling * (i + 1)
    mu += 0.05 * np.diag(np.arange(n))
    obs = []
    for i in range(n):
        P = np.zeros((n, n))
        P[i, i] = 1.0
        obs.append(Observable("prj", P, f"p{i}"))
    e_last = np.zeros(n)
    e_last[-1] = 1.0
    obs.append(Observable("ovl", e_last, "ovl_last"))
    return EnergyBasisSystem(E, [mu], None, obs)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)
