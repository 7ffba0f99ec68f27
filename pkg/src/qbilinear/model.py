"""Bound states on a 1D grid and their energy-representation matrix elements.

The field-free Hamiltonian ``T + V`` is discretised with a sinc-DVR on a
uniform grid ``x_i = x_min + i*dx`` with ``dx = (x_max - x_min)/n_points``.
Eigenvectors are returned as grid values normalised so that
``sum(psi_i * psi_j) * dx == delta_ij``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import scipy.linalg as sla
from scipy.interpolate import CubicSpline

from . import archive
from .errors import BoundStateUnavailable, FormatError, GridUnconverged, ValidationError

HERMITIAN_TOL = 1e-12


@dataclass(frozen=True)
class GridSpec:
    n_points: int
    x_min: float
    x_max: float
    mass: float

    def __post_init__(self):
        if self.n_points < 8:
            raise ValidationError("grid needs n_points >= 8")
        if not self.x_min < self.x_max:
            raise ValidationError("grid needs x_min < x_max")
        if self.mass <= 0:
            raise ValidationError("mass must be positive")

    @property
    def dx(self) -> float:
        return (self.x_max - self.x_min) / self.n_points

    @property
    def x(self) -> np.ndarray:
        return self.x_min + self.dx * np.arange(self.n_points)

    def refined(self) -> "GridSpec":
        return GridSpec(2 * self.n_points, self.x_min, self.x_max, self.mass)


# --- one-dimensional functions: potentials, dipoles, couplings, AMOs -------


@dataclass(frozen=True)
class Morse:
    d_e: float
    r_e: float
    alpha: float

    def __post_init__(self):
        if self.d_e <= 0 or self.alpha <= 0:
            raise ValidationError("Morse potential needs d_e > 0 and alpha > 0")

    def __call__(self, x):
        return self.d_e * (1.0 - np.exp(-self.alpha * (np.asarray(x) - self.r_e))) ** 2

    @property
    def threshold(self) -> float:
        return self.d_e

    def n_bound(self, mass: float) -> int:
        """Number of bound states of the untruncated Morse oscillator."""
        return math.floor(math.sqrt(2.0 * mass * self.d_e) / self.alpha - 0.5) + 1

    def analytic_energies(self, mass: float, n: int) -> np.ndarray:
        omega = self.alpha * math.sqrt(2.0 * self.d_e / mass)
        v = np.arange(n) + 0.5
        return omega * v - omega**2 * v**2 / (4.0 * self.d_e)


@dataclass(frozen=True)
class Taylor:
    """``constant + sum_k coefficients[k-1] * (x - center)**k / k!``."""

    coefficients: tuple
    center: float = 0.0
    constant: float = 0.0

    def __call__(self, x):
        dx = np.asarray(x, dtype=float) - self.center
        out = np.full_like(dx, self.constant, dtype=float)
        for k, c in enumerate(self.coefficients, start=1):
            out = out + c * dx**k / math.factorial(k)
        return out

    @property
    def threshold(self) -> float:
        # polynomial potentials confine everything; callers bound v_max
        return math.inf


@dataclass(frozen=True)
class Tabulated:
    x: tuple
    y: tuple

    def __post_init__(self):
        if len(self.x) != len(self.y) or len(self.x) < 4:
            raise ValidationError("tabulated function needs >= 4 matching samples")
        if np.any(np.diff(self.x) <= 0):
            raise ValidationError("tabulated abscissae must increase strictly")

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        lo, hi = self.x[0], self.x[-1]
        if x.min() < lo - 1e-12 or x.max() > hi + 1e-12:
            raise ValidationError(f"grid [{x.min()}, {x.max()}] leaves table range [{lo}, {hi}]")
        return CubicSpline(self.x, self.y)(np.clip(x, lo, hi))

    @property
    def threshold(self) -> float:
        return float(min(self.y[0], self.y[-1]))


@dataclass(frozen=True)
class Mecke:
    """Dipole ``q_0 * x * exp(-x / r_0)``."""

    r_0: float
    q_0: float

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        return self.q_0 * x * np.exp(-x / self.r_0)


@dataclass(frozen=True)
class Gaussian:
    center: float
    width: float

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        return np.exp(-((x - self.center) ** 2) / (2.0 * self.width**2))


# --- observables -------------------------------------------------------------


@dataclass(frozen=True)
class Amo:
    handle: object
    label: str = "amo"


@dataclass(frozen=True)
class Projector:
    indices: tuple
    label: str = ""


@dataclass(frozen=True)
class Overlap:
    indices: tuple
    label: str = ""


@dataclass
class Observable:
    kind: str  # "amo" | "prj" | "ovl"
    value: np.ndarray  # matrix for amo/prj, vector for ovl
    label: str = ""


@dataclass
class EnergyBasisSystem:
    energies: np.ndarray
    dipole: list = field(default_factory=list)
    sbc: np.ndarray | None = None
    observables: list = field(default_factory=list)

    def __post_init__(self):
        self.energies = np.asarray(self.energies, dtype=float)
        self.validate()

    @property
    def n_states(self) -> int:
        return len(self.energies)

    def validate(self) -> None:
        n = self.n_states
        if n < 1:
            raise ValidationError("energy basis is empty")
        if np.any(np.diff(self.energies) < 0):
            raise ValidationError("energies must be sorted ascending")
        mats = [("dipole", m) for m in self.dipole]
        if self.sbc is not None:
            mats.append(("sbc", self.sbc))
        mats += [(f"observable {o.label}", o.value) for o in self.observables if o.kind != "ovl"]
        for name, m in mats:
            m = np.asarray(m)
            if m.shape != (n, n):
                raise ValidationError(f"{name} has shape {m.shape}, expected {(n, n)}")
            if np.max(np.abs(m - m.conj().T), initial=0.0) > HERMITIAN_TOL * max(1.0, np.abs(m).max()):
                raise ValidationError(f"{name} is not Hermitian")
        for o in self.observables:
            if o.kind == "ovl" and np.shape(o.value) != (n,):
                raise ValidationError(f"overlap observable {o.label} needs length {n}")

    def export(self, path) -> None:
        export_energy_basis(self, path)


# --- solvers -----------------------------------------------------------------


def sinc_dvr_kinetic(grid: GridSpec) -> np.ndarray:
    n, dx = grid.n_points, grid.dx
    d = np.arange(n)[:, None] - np.arange(n)[None, :]
    safe = np.where(d == 0, 1, d)
    t = np.where(d == 0, np.pi**2 / 3.0, 2.0 * (-1.0) ** np.abs(d) / safe**2)
    return t / (2.0 * grid.mass * dx**2)


def _fix_signs(vecs: np.ndarray) -> np.ndarray:
    # leftmost significant lobe positive, for reproducible matrix elements
    for j in range(vecs.shape[1]):
        col = vecs[:, j]
        k = np.argmax(np.abs(col) > 1e-3 * np.abs(col).max())
        if col[k] < 0:
            vecs[:, j] = -col
    return vecs


def _diagonalize(grid: GridSpec, pot, v_max: int):
    h = sinc_dvr_kinetic(grid) + np.diag(pot(grid.x))
    top = min(v_max, grid.n_points - 1)
    energies, vecs = sla.eigh(h, subset_by_index=[0, top])
    return energies, _fix_signs(vecs) / math.sqrt(grid.dx)


def solve_bound_states(grid: GridSpec, pot, v_min: int = 0, v_max: int | None = None,
                       check_convergence: bool = False):
    """Eigenpairs of the grid Hamiltonian for states ``v_min..v_max``.

    States at or above the dissociation threshold of ``pot`` are discarded;
    asking for one of them raises :class:`BoundStateUnavailable`.  With
    ``v_max=None`` all bound states are returned (Morse/tabulated only).

    Returns
    -------
    energies : (k,) ndarray
    vectors : (n_points, k) ndarray, grid values of the eigenfunctions
    """
    threshold = getattr(pot, "threshold", math.inf)
    if v_max is None:
        if not math.isfinite(threshold):
            raise ValidationError("v_max is required for confining potentials")
        v_max = grid.n_points - 1
        energies, vecs = _diagonalize(grid, pot, v_max)
        v_max = int(np.sum(energies < threshold)) - 1
        if v_max < v_min:
            raise BoundStateUnavailable("potential supports no requested bound state")
    if not 0 <= v_min <= v_max:
        raise ValidationError("need 0 <= v_min <= v_max")
    if v_max >= grid.n_points:
        raise ValidationError("v_max must be smaller than n_points")

    energies, vecs = _diagonalize(grid, pot, v_max)
    n_bound = int(np.sum(energies < threshold))
    if n_bound <= v_max:
        raise BoundStateUnavailable(
            f"state v={v_max} requested but only {n_bound} states lie below {threshold:g}")
    energies, vecs = energies[v_min:v_max + 1], vecs[:, v_min:v_max + 1]

    if check_convergence:
        fine, _ = _diagonalize(grid.refined(), pot, v_max)
        change = np.max(np.abs(fine[v_min:v_max + 1] - energies))
        if change > 1e-8:
            raise GridUnconverged(f"energies move by {change:.3g} when n_points is doubled")
    return energies, vecs


def matrix_elements(vectors: np.ndarray, operator, grid: GridSpec):
    """Energy-representation matrix (or vector) of ``operator``.

    ``operator`` is a position function (dipole, coupling, potential), an
    :class:`Amo`, a :class:`Projector` or an :class:`Overlap`.
    """
    n = vectors.shape[1]
    if isinstance(operator, (Projector, Overlap)):
        idx = np.atleast_1d(np.asarray(operator.indices, dtype=int))
        if np.any(idx < 0) or np.any(idx >= n):
            raise IndexError(f"state indices {idx.tolist()} outside basis of {n}")
        if isinstance(operator, Projector):
            out = np.zeros((n, n))
            out[idx, idx] = 1.0
        else:
            out = np.zeros(n)
            out[idx] = 1.0
        return out
    func = operator.handle if isinstance(operator, Amo) else operator
    f = func(grid.x)
    m = (vectors.T * f) @ vectors * grid.dx
    return 0.5 * (m + m.T)


def build_energy_basis(grid: GridSpec, pot, dipoles: Sequence = (), sbc=None,
                       observables: Sequence = (), v_min: int = 0, v_max: int | None = None,
                       check_convergence: bool = False) -> EnergyBasisSystem:
    """Run the bound-state solve and all matrix-element quadratures."""
    energies, vecs = solve_bound_states(grid, pot, v_min, v_max, check_convergence)
    obs = []
    for i, spec in enumerate(observables):
        kind = {Amo: "amo", Projector: "prj", Overlap: "ovl"}[type(spec)]
        label = spec.label or f"{kind}{list(np.atleast_1d(getattr(spec, 'indices', [i])))}"
        obs.append(Observable(kind, matrix_elements(vecs, spec, grid), label))
    return EnergyBasisSystem(
        energies=energies,
        dipole=[matrix_elements(vecs, d, grid) for d in dipoles],
        sbc=None if sbc is None else matrix_elements(vecs, sbc, grid),
        observables=obs,
    )


# --- persistence -------------------------------------------------------------


def export_energy_basis(system: EnergyBasisSystem, path) -> None:
    arrays = {"energies": system.energies}
    for k, m in enumerate(system.dipole):
        arrays[f"dipole_{k}"] = np.asarray(m)
    if system.sbc is not None:
        arrays["sbc"] = np.asarray(system.sbc)
    for q, o in enumerate(system.observables):
        arrays[f"observable_{q}"] = np.asarray(o.value)
    meta = {
        "stage": "tise",
        "n_dipole": len(system.dipole),
        "observables": [{"kind": o.kind, "label": o.label} for o in system.observables],
    }
    archive.write_archive(path, arrays, meta)


def import_energy_basis(path) -> EnergyBasisSystem:
    arrays, meta = archive.read_archive(path)
    try:
        dipole = [arrays[f"dipole_{k}"] for k in range(meta["n_dipole"])]
        obs = [Observable(o["kind"], arrays[f"observable_{q}"], o["label"])
               for q, o in enumerate(meta["observables"])]
        return EnergyBasisSystem(arrays["energies"], dipole, arrays.get("sbc"), obs)
    except KeyError as exc:
        raise FormatError(f"energy-basis archive {path} lacks {exc}") from exc
