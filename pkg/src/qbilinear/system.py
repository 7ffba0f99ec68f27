"""Bilinear control systems for closed (TDSE) and open (Lindblad) dynamics.

The shifted input equation is

    x' = (A + i sum_k u_k N_k) x + i sum_k u_k b_k,   b_k = N_k x_e,

with outputs ``y_q = Re(C_q x) + y_offset_q`` (open systems; row ``C_q`` is
``vec(O_q)^H``) or the quadratic form in ``D_q`` (closed systems).

Density matrices are vectorised by stacking columns, ``vec(rho)[a + n*b] =
rho[a, b]``; the diagonals-first ordering is a fixed permutation of that.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np
import scipy.sparse as sp

from .errors import DegenerateTransition, TooLarge, ValidationError
from .model import EnergyBasisSystem

EQUILIBRIUM_TOL = 1e-10


# --- rate and dephasing models -----------------------------------------------


@dataclass(frozen=True)
class RateModel:
    kind: str = "fermi"  # fermi | einstein | constant | file
    reference_rate: float = 0.0
    temperature: float = 0.0
    lower: int = 0
    upper: int = 1
    values: np.ndarray | None = None  # downward rates Gamma[i, j], j > i (kind="file")

    def __post_init__(self):
        if self.kind not in ("fermi", "einstein", "constant", "file"):
            raise ValidationError(f"unknown rate model {self.kind!r}")
        if self.reference_rate < 0 or self.temperature < 0:
            raise ValidationError("rates and temperature must be non-negative")


@dataclass(frozen=True)
class DephasingModel:
    kind: str = "none"  # none | quadratic | constant | file
    kappa: float = 0.0
    rate: float = 0.0
    values: np.ndarray | None = None

    def __post_init__(self):
        if self.kind not in ("none", "quadratic", "constant", "file"):
            raise ValidationError(f"unknown dephasing model {self.kind!r}")


def _thermal_factor(omega, temperature):
    if temperature == 0.0:
        return np.ones_like(omega)
    return 1.0 / np.expm1(omega / temperature)


def relaxation_rates(basis: EnergyBasisSystem, model: RateModel) -> np.ndarray:
    """Matrix ``G`` with ``G[i, j]`` the rate for the jump ``i <- j``.

    Downward rates follow the chosen model and are scaled so that
    ``G[lower, upper] == reference_rate``; upward rates come from detailed
    balance and vanish at zero temperature.
    """
    E = basis.energies
    n = len(E)
    lo, up = model.lower, model.upper
    if not (0 <= lo < up < n):
        raise ValidationError(f"reference transition {lo} <- {up} not inside {n} states")
    omega = E[None, :] - E[:, None]  # omega[i, j] = E_j - E_i
    iu, ju = np.triu_indices(n, k=1)
    w = omega[iu, ju]

    if model.kind in ("fermi", "einstein"):
        if model.kind == "fermi":
            if basis.sbc is None:
                raise ValidationError("Fermi rate model needs system-bath coupling matrix elements")
            coupling = np.abs(np.asarray(basis.sbc)[ju, iu]) ** 2
        else:
            if not basis.dipole:
                raise ValidationError("Einstein rate model needs dipole matrix elements")
            coupling = sum(np.abs(np.asarray(m)[ju, iu]) ** 2 for m in basis.dipole)
        bad = (w <= 0) & (coupling > 0)
        if np.any(bad):
            k = int(np.argmax(bad))
            raise DegenerateTransition(f"zero transition frequency for {iu[k]} <- {ju[k]}")
        with np.errstate(divide="ignore", invalid="ignore"):
            if model.kind == "fermi":
                down = np.where(coupling > 0, coupling / w * _thermal_factor(w, model.temperature), 0.0)
            else:
                down = coupling * w**3
        down_m = np.zeros((n, n))
        down_m[iu, ju] = down
        ref = down_m[lo, up]
        if ref <= 0 or not np.isfinite(ref):
            raise DegenerateTransition(f"reference transition {lo} <- {up} has no coupling")
        down_m *= model.reference_rate / ref
    elif model.kind == "constant":
        down_m = np.zeros((n, n))
        down_m[iu, ju] = model.reference_rate
    else:
        if model.values is None:
            raise ValidationError("rate model 'file' needs a values matrix")
        down_m = np.triu(np.asarray(model.values, dtype=float), k=1)

    if model.temperature > 0:
        if np.any((w <= 0) & (down_m[iu, ju] > 0)):
            raise DegenerateTransition("detailed balance needs non-degenerate levels")
        up_m = np.zeros((n, n))
        up_m[ju, iu] = np.exp(-w / model.temperature) * down_m[iu, ju]
        return down_m + up_m
    return down_m


def dephasing_rates(basis: EnergyBasisSystem, model: DephasingModel) -> np.ndarray:
    """Pure-dephasing rates ``gamma[i, j]`` of the coherences (zero diagonal)."""
    E = basis.energies
    n = len(E)
    if model.kind == "none":
        return np.zeros((n, n))
    if model.kind == "quadratic":
        g = model.kappa * (E[:, None] - E[None, :]) ** 2
    elif model.kind == "constant":
        g = np.full((n, n), model.rate)
    else:
        g = np.asarray(model.values, dtype=float)
        g = 0.5 * (g + g.T)
    np.fill_diagonal(g, 0.0)
    return g


# --- vectorisation -----------------------------------------------------------


def ordering_permutation(n: int, ordering: str) -> np.ndarray:
    """``perm`` such that ``x_ordered = x_colstack[perm]``."""
    if ordering == "cs":
        return np.arange(n * n)
    if ordering != "df":
        raise ValidationError(f"ordering must be 'cs' or 'df', got {ordering!r}")
    diag = np.arange(n) * (n + 1)
    mask = np.ones(n * n, bool)
    mask[diag] = False
    return np.concatenate([diag, np.flatnonzero(mask)])


def permutation_matrix(perm: np.ndarray) -> sp.csr_matrix:
    k = len(perm)
    return sp.csr_matrix((np.ones(k), (np.arange(k), perm)), shape=(k, k))


def vec(rho: np.ndarray, ordering: str = "cs") -> np.ndarray:
    n = rho.shape[0]
    return np.asarray(rho).reshape(-1, order="F")[ordering_permutation(n, ordering)]


def unvec(x: np.ndarray, ordering: str = "cs") -> np.ndarray:
    n = math.isqrt(len(x))
    flat = np.empty(n * n, dtype=np.result_type(x, complex))
    flat[ordering_permutation(n, ordering)] = x
    return flat.reshape((n, n), order="F")


def boltzmann(energies: np.ndarray, temperature: float) -> np.ndarray:
    e = np.asarray(energies) - energies[0]
    if temperature == 0.0:
        p = (e == 0.0).astype(float)
    else:
        p = np.exp(-e / temperature)
    return np.diag(p / p.sum())


# --- the bilinear system -----------------------------------------------------


@dataclass
class BilinearSystem:
    kind: str  # tdse | lvne | external | reduced
    A: sp.csr_matrix
    N: list
    b: np.ndarray  # (m, dim)
    C: np.ndarray  # (p, dim), rows are c_q^H
    D: list  # Hermitian (dim, dim) output matrices (tdse only)
    x_e: np.ndarray
    x0: np.ndarray
    labels: list = field(default_factory=list)
    y_offset: np.ndarray | None = None
    xi: float = 1.0
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.A = sp.csr_matrix(self.A, dtype=complex)
        self.N = [sp.csr_matrix(Nk, dtype=complex) for Nk in self.N]
        n = self.A.shape[0]
        self.b = np.asarray(self.b, dtype=complex).reshape(len(self.N), n)
        self.C = np.asarray(self.C, dtype=complex).reshape(-1, n)
        self.x_e = np.asarray(self.x_e, dtype=complex)
        self.x0 = np.asarray(self.x0, dtype=complex)
        if self.y_offset is None:
            self.y_offset = np.real(self.C @ self.x_e)
        self.y_offset = np.asarray(self.y_offset, dtype=float)
        for name, shp in (("x_e", (n,)), ("x0", (n,))):
            if getattr(self, name).shape != shp:
                raise ValidationError(f"{name} has shape {getattr(self, name).shape}, expected {shp}")
        for Nk in self.N:
            if Nk.shape != (n, n):
                raise ValidationError("control operators must match A")

    @property
    def dim(self) -> int:
        return self.A.shape[0]

    @property
    def n_controls(self) -> int:
        return len(self.N)

    @property
    def n_outputs(self) -> int:
        return len(self.D) if self.kind == "tdse" else self.C.shape[0]

    @property
    def n_states(self) -> int:
        return self.dim if self.kind == "tdse" else math.isqrt(self.dim)

    def equilibrium_residual(self) -> float:
        return float(np.linalg.norm(self.A @ self.x_e))

    def with_x0(self, x0) -> "BilinearSystem":
        return replace(self, x0=np.asarray(x0, dtype=complex))


def _observable_matrix(obs) -> np.ndarray:
    if obs.kind == "ovl":
        v = np.asarray(obs.value, dtype=complex)
        return np.outer(v, v.conj())
    return np.asarray(obs.value, dtype=complex)


def _select(basis: EnergyBasisSystem, observables):
    if observables is None:
        return list(basis.observables)
    try:
        return [basis.observables[i] for i in observables]
    except IndexError as exc:
        raise ValidationError(f"observable selection {observables} out of range") from exc


def build_tdse(basis: EnergyBasisSystem, observables=None) -> BilinearSystem:
    """Closed-system matrices: ``A = -i diag(E - E_0)``, ``N_k = mu_k``, ``x_e = e_0``."""
    n = basis.n_states
    A = sp.diags(-1j * (basis.energies - basis.energies[0])).tocsr()
    N = [sp.csr_matrix(np.asarray(m, dtype=complex)) for m in basis.dipole]
    x_e = np.zeros(n, complex)
    x_e[0] = 1.0
    obs = _select(basis, observables)
    D = [_observable_matrix(o) for o in obs]
    C = np.zeros((len(obs), n), complex)
    for q, o in enumerate(obs):
        if o.kind == "ovl":
            C[q] = np.asarray(o.value).conj()
    b = np.array([Nk @ x_e for Nk in N]).reshape(len(N), n)
    return BilinearSystem("tdse", A, N, b, C, D, x_e, np.zeros(n, complex),
                          labels=[o.label for o in obs],
                          meta={"energies": basis.energies.tolist(),
                                "kinds": [o.kind for o in obs]})


def lindblad_generator(energies, rates, dephasing=None) -> sp.csr_matrix:
    """Column-stacked Lindblad generator for jump operators ``sqrt(G[i,j]) |i><j|``."""
    E = np.asarray(energies, float) - energies[0]
    n = len(E)
    eye = sp.identity(n, format="csr")
    H = sp.diags(E)
    A = -1j * (sp.kron(eye, H) - sp.kron(H.T, eye))
    G = np.array(rates, dtype=float)
    np.fill_diagonal(G, 0.0)
    ii, jj = np.nonzero(G)
    gain = sp.csr_matrix((G[ii, jj], (ii * (n + 1), jj * (n + 1))), shape=(n * n, n * n))
    out = G.sum(axis=0)  # total decay rate of each level
    loss = -0.5 * (np.add.outer(out, out))  # [b, a] -> element rho_ab at a + n b
    A = A + gain + sp.diags(loss.reshape(-1))
    if dephasing is not None:
        A = A - sp.diags(np.asarray(dephasing, float).T.reshape(-1))
    A = sp.csr_matrix(A)
    A.eliminate_zeros()
    return A


def commutator_superoperator(mu) -> sp.csr_matrix:
    mu = sp.csr_matrix(np.asarray(mu, dtype=complex))
    n = mu.shape[0]
    eye = sp.identity(n, format="csr")
    N = sp.csr_matrix(sp.kron(eye, mu) - sp.kron(mu.T, eye))
    N.eliminate_zeros()
    return N


def build_lvne(basis: EnergyBasisSystem, rates: RateModel, dephasing: DephasingModel | None = None,
               observables=None, ordering: str = "df") -> BilinearSystem:
    """Vectorised Lindblad system with Boltzmann equilibrium at the bath temperature."""
    n = basis.n_states
    G = relaxation_rates(basis, rates)
    gamma = None if dephasing is None else dephasing_rates(basis, dephasing)
    A = lindblad_generator(basis.energies, G, gamma)
    N = [commutator_superoperator(m) for m in basis.dipole]
    rho_e = boltzmann(basis.energies, rates.temperature)
    x_e = vec(rho_e)
    obs = _select(basis, observables)
    C = np.array([vec(_observable_matrix(o)).conj() for o in obs]).reshape(len(obs), n * n)

    perm = ordering_permutation(n, ordering)
    if ordering != "cs":
        P = permutation_matrix(perm)
        A = sp.csr_matrix(P @ A @ P.T)
        N = [sp.csr_matrix(P @ Nk @ P.T) for Nk in N]
        x_e = x_e[perm]
        C = C[:, perm]
    b = np.array([Nk @ x_e for Nk in N]).reshape(len(N), n * n)
    return BilinearSystem("lvne", A, N, b, C, [], x_e, np.zeros(n * n, complex),
                          labels=[o.label for o in obs],
                          meta={"energies": basis.energies.tolist(), "ordering": ordering,
                                "temperature": rates.temperature,
                                "kinds": [o.kind for o in obs]})


# --- initial states ----------------------------------------------------------


@dataclass(frozen=True)
class Pure:
    v: int


@dataclass(frozen=True)
class Cat:
    v1: int
    v2: int


@dataclass(frozen=True)
class Mixed:
    v1: int
    v2: int


@dataclass(frozen=True)
class Thermal:
    temperature: float


def initial_state(spec, system: BilinearSystem) -> np.ndarray:
    """Shifted initial vector ``x(0) = x_raw - x_e``."""
    n = system.n_states
    for v in [getattr(spec, a) for a in ("v", "v1", "v2") if hasattr(spec, a)]:
        if not 0 <= v < n:
            raise IndexError(f"state index {v} outside basis of {n}")
    if system.kind == "tdse":
        psi = np.zeros(n, complex)
        if isinstance(spec, Pure):
            psi[spec.v] = 1.0
        elif isinstance(spec, Cat):
            psi[spec.v1] += 1 / math.sqrt(2)
            psi[spec.v2] += 1 / math.sqrt(2)
        else:
            raise ValidationError(f"{type(spec).__name__} initial state needs a density matrix (lvne)")
        return psi - system.x_e
    if system.kind != "lvne":
        raise ValidationError("initial states can only be set for tdse/lvne systems")
    rho = np.zeros((n, n), complex)
    if isinstance(spec, Pure):
        rho[spec.v, spec.v] = 1.0
    elif isinstance(spec, Cat):
        ket = np.zeros(n)
        ket[spec.v1] += 1.0
        ket[spec.v2] += 1.0
        rho = 0.5 * np.outer(ket, ket)
    elif isinstance(spec, Mixed):
        rho[spec.v1, spec.v1] += 0.5
        rho[spec.v2, spec.v2] += 0.5
    elif isinstance(spec, Thermal):
        rho = boltzmann(np.asarray(system.meta["energies"]), spec.temperature).astype(complex)
    else:
        raise ValidationError(f"unknown initial state {spec!r}")
    return vec(rho, system.meta.get("ordering", "cs")) - system.x_e


def density_matrix(system: BilinearSystem, x: np.ndarray) -> np.ndarray:
    """De-vectorise a shifted LvNE state back to ``rho``."""
    return unvec(np.asarray(x) + system.x_e, system.meta.get("ordering", "cs"))


def spectrum(system: BilinearSystem, max_dim: int = 3000) -> np.ndarray:
    if system.dim > max_dim:
        raise TooLarge(f"dense eigensolve of a {system.dim}-dim A exceeds cap {max_dim}")
    return np.linalg.eigvals(system.A.toarray())


def trace_functional(system: BilinearSystem) -> np.ndarray:
    """Row vector ``vec(I)^H`` in the system's ordering."""
    n = system.n_states
    return vec(np.eye(n), system.meta.get("ordering", "cs")).astype(complex)
