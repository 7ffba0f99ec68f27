"""Time propagation of bilinear systems and output evaluation."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .errors import StiffnessFailure, ValidationError
from .system import BilinearSystem


@dataclass(frozen=True)
class TimeGrid:
    delta: float
    start: int = 0
    stop: int = 100

    def __post_init__(self):
        if self.delta <= 0 or self.stop <= self.start:
            raise ValidationError("time grid needs delta > 0 and stop > start")

    @property
    def n_steps(self) -> int:
        return self.stop - self.start

    @property
    def times(self) -> np.ndarray:
        return self.delta * np.arange(self.start, self.stop + 1)

    @property
    def t_start(self) -> float:
        return self.delta * self.start

    @property
    def t_end(self) -> float:
        return self.delta * self.stop

    def substep_times(self, substeps: int) -> np.ndarray:
        return self.t_start + (self.delta / substeps) * np.arange(self.n_steps * substeps + 1)


# --- pulses and fields -------------------------------------------------------


def sin2_envelope(t, duration, t_start=0.0):
    """sin^2 half wave on [t_start, t_start + duration], zero outside."""
    tau = (np.asarray(t, dtype=float) - t_start) / duration
    return np.where((tau >= 0) & (tau <= 1), np.sin(np.pi * np.clip(tau, 0, 1)) ** 2, 0.0)


@dataclass(frozen=True)
class Sin2Pulse:
    """``amplitude * sin^2 envelope * cos(omega (t-t_c) + chirp (t-t_c)^2 / 2 + phase)``.

    ``t_c`` is the pulse centre; a zero ``frequency`` gives a DC pulse.
    """

    amplitude: float
    frequency: float
    duration: float
    t_start: float = 0.0
    chirp: float = 0.0
    phase: float = 0.0

    def __call__(self, t):
        t = np.asarray(t, dtype=float)
        tc = self.t_start + 0.5 * self.duration
        arg = self.frequency * (t - tc) + 0.5 * self.chirp * (t - tc) ** 2 + self.phase
        return self.amplitude * sin2_envelope(t, self.duration, self.t_start) * np.cos(arg)


@dataclass
class ControlField:
    """Sampled fields ``u_k(t_0 + i dt)`` with shape functions and penalties."""

    t0: float
    dt: float
    values: np.ndarray  # (m, K+1)
    shape: np.ndarray | None = None  # (m, K+1), in [0, 1]
    alpha: np.ndarray | None = None  # (m,)

    def __post_init__(self):
        self.values = np.atleast_2d(np.asarray(self.values, dtype=float))
        if self.shape is None:
            self.shape = np.ones_like(self.values)
        self.shape = np.atleast_2d(np.asarray(self.shape, dtype=float))
        if self.alpha is None:
            self.alpha = np.ones(self.values.shape[0])
        self.alpha = np.atleast_1d(np.asarray(self.alpha, dtype=float))
        if self.shape.shape != self.values.shape:
            raise ValidationError("field shape samples must match the field samples")
        if np.any(self.shape < 0):
            raise ValidationError("shape function must be non-negative")
        if np.any(self.alpha <= 0):
            raise ValidationError("penalty factors alpha must be positive")
        if self.values.shape[1] < 2 or self.dt <= 0:
            raise ValidationError("a field needs >= 2 samples and dt > 0")

    @classmethod
    def from_functions(cls, funcs, t_end, dt, t0=0.0, shapes=None, alpha=None):
        """Sample callables ``funcs[k](t)`` (and ``shapes[k](t)``) on ``[t0, t_end]``."""
        funcs = funcs if isinstance(funcs, (list, tuple)) else [funcs]
        n = int(round((t_end - t0) / dt))
        t = t0 + dt * np.arange(n + 1)
        values = np.array([f(t) for f in funcs])
        shape = None
        if shapes is not None:
            shapes = shapes if isinstance(shapes, (list, tuple)) else [shapes]
            shape = np.array([s(t) for s in shapes])
        return cls(t0, dt, values, shape, alpha)

    @classmethod
    def zero(cls, m, t_end, t0=0.0):
        return cls(t0, t_end - t0, np.zeros((m, 2)))

    @property
    def n_channels(self) -> int:
        return self.values.shape[0]

    @property
    def times(self) -> np.ndarray:
        return self.t0 + self.dt * np.arange(self.values.shape[1])

    def _interp(self, arr, t):
        t = np.asarray(t, dtype=float)
        return np.array([np.interp(t, self.times, a) for a in arr])

    def at(self, t) -> np.ndarray:
        """Linearly interpolated field values, shape (m, len(t))."""
        return self._interp(self.values, t)

    def shape_at(self, t) -> np.ndarray:
        return self._interp(self.shape, t)

    def resampled(self, t_end, dt, t0=None) -> "ControlField":
        t0 = self.t0 if t0 is None else t0
        n = int(round((t_end - t0) / dt))
        t = t0 + dt * np.arange(n + 1)
        return ControlField(t0, dt, self.at(t), self.shape_at(t), self.alpha.copy())

    def write_csv(self, path) -> None:
        write_csv(path, self.times, self.values.T, [f"u_{k + 1}" for k in range(self.n_channels)])


@dataclass
class Trajectory:
    times: np.ndarray
    states: np.ndarray  # (n_t, dim), shifted states
    outputs: np.ndarray  # (n_t, p)
    labels: list = field(default_factory=list)
    info: dict = field(default_factory=dict)

    def __post_init__(self):
        if not len(self.times) == len(self.states) == len(self.outputs):
            raise ValidationError("trajectory arrays differ in length")

    def write_csv(self, path) -> None:
        labels = self.labels or [f"y_{q + 1}" for q in range(self.outputs.shape[1])]
        write_csv(path, self.times, self.outputs, labels)


def write_csv(path, times, columns, labels) -> None:
    columns = np.asarray(columns).reshape(len(times), -1)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t", *labels])
        for t, row in zip(times, columns):
            w.writerow([repr(float(t)), *(repr(float(v)) for v in row)])


# --- outputs -----------------------------------------------------------------


def evaluate_outputs(system: BilinearSystem, x) -> np.ndarray:
    """Observables for shifted state(s) ``x`` (shape (dim,) or (n_t, dim))."""
    x = np.asarray(x, dtype=complex)
    single = x.ndim == 1
    X = np.atleast_2d(x)
    if system.kind == "tdse":
        psi = X + system.x_e
        y = np.stack([np.real(np.einsum("ti,ij,tj->t", psi.conj(), D, psi)) for D in system.D], axis=1) \
            if system.D else np.zeros((len(X), 0))
    else:
        y = np.real(X @ system.C.T) + system.y_offset
    return y[0] if single else y


def operators(system: BilinearSystem) -> kernels.Operators:
    """Kernel operators acting on the physical field (undoing the xi scaling)."""
    xi = system.xi
    return kernels.Operators(system.A, [xi * Nk for Nk in system.N], xi * system.b)


# --- integrators -------------------------------------------------------------


def _check_field(system, fld):
    if fld.n_channels != system.n_controls:
        raise ValidationError(f"field has {fld.n_channels} channels, system needs {system.n_controls}")


def propagate_adaptive(system: BilinearSystem, fld: ControlField | None, x0, grid: TimeGrid,
                       reltol: float = 1e-6, abstol: float | None = None) -> Trajectory:
    """Dormand-Prince 4(5) integration; outputs at the main time steps."""
    if not 1e-14 < reltol < 1e-2:
        raise ValidationError("reltol must lie in (1e-14, 1e-2)")
    if fld is None:
        fld = ControlField.zero(system.n_controls, grid.t_end, grid.t_start)
    _check_field(system, fld)
    abstol = reltol * 1e-3 if abstol is None else abstol
    x0 = system.x0 if x0 is None else x0
    times = grid.times
    states, status, accepted = kernels.dopri_propagate(
        operators(system), x0, fld.values, fld.t0, fld.dt, times, reltol, abstol,
        min(grid.delta, 1.0), 1e-12)
    if status != 0:
        raise StiffnessFailure("step size fell below 1e-12 a.u.")
    return Trajectory(times, states, evaluate_outputs(system, states), list(system.labels),
                      {"accepted_steps": int(accepted), "reltol": reltol})


def propagate_fixed(system: BilinearSystem, fld: ControlField | None, x0, grid: TimeGrid,
                    substeps: int = 10, scheme: str = "rk4") -> Trajectory:
    """Fixed-step Runge-Kutta; field linearly interpolated between substeps."""
    if substeps < 1:
        raise ValidationError("substeps must be >= 1")
    if fld is None:
        fld = ControlField.zero(system.n_controls, grid.t_end, grid.t_start)
    _check_field(system, fld)
    x0 = system.x0 if x0 is None else x0
    h = grid.delta / substeps
    u = fld.at(grid.substep_times(substeps))
    ops = operators(system)
    if scheme == "rk4":
        states = kernels.rk4_propagate(ops, x0, u, h, substeps)
    elif scheme == "rk2":
        states = _rk2(ops, x0, u, h, substeps)
    else:
        raise ValidationError(f"unknown scheme {scheme!r}")
    return Trajectory(grid.times, states, evaluate_outputs(system, states), list(system.labels),
                      {"substeps": substeps, "scheme": scheme})


def _rk2(ops, x0, u, h, every):
    from ._numpy_kernels import rhs

    n_steps = u.shape[1] - 1
    out = np.empty((n_steps // every + 1, len(x0)), dtype=complex)
    x = np.array(x0, dtype=complex)
    out[0] = x
    for j in range(n_steps):
        um = 0.5 * (u[:, j] + u[:, j + 1])
        x = x + h * rhs(ops, x + 0.5 * h * rhs(ops, x, u[:, j]), um)
        if (j + 1) % every == 0:
            out[(j + 1) // every] = x
    return out


def crossover_time(times, populations, target: int = 0) -> float | None:
    """First time at which ``populations[:, target]`` exceeds every other column."""
    P = np.asarray(populations)
    others = np.delete(P, target, axis=1).max(axis=1)
    hit = np.flatnonzero(P[:, target] > others)
    if len(hit) == 0:
        return None
    k = hit[0]
    if k == 0:
        return float(times[0])
    # linear interpolation of the crossing between main steps
    d0 = P[k - 1, target] - others[k - 1]
    d1 = P[k, target] - others[k]
    frac = d0 / (d0 - d1) if d0 != d1 else 1.0
    return float(times[k - 1] + frac * (times[k] - times[k - 1]))
