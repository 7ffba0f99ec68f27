"""Monotonically convergent optimal control (Zhu-Rabitz / Krotov family)."""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .errors import NumericalFailure, ShapeViolation, ValidationError
from .propagation import ControlField, TimeGrid, Trajectory, evaluate_outputs, operators
from .system import BilinearSystem

FUNCTIONALS = ("J1a", "J1b", "J1c")


@dataclass(frozen=True)
class OctConfig:
    target: int
    functional: str = "J1a"
    alpha: tuple = (1.0,)
    eta: float = 1.0
    zeta: float = 1.0
    max_iter: int = 50
    tolerance: float = 1e-10
    j1c_overlap_eval: str = "boundary"  # or "every"
    substeps: int = 10

    def __post_init__(self):
        if self.functional not in FUNCTIONALS:
            raise ValidationError(f"functional must be one of {FUNCTIONALS}")
        if not (0 <= self.eta <= 2 and 0 <= self.zeta <= 2):
            raise ValidationError("eta and zeta must lie in [0, 2]")
        if self.tolerance <= 0:
            raise ValidationError("tolerance must be positive")
        if self.max_iter < 0 or self.substeps < 1:
            raise ValidationError("max_iter >= 0 and substeps >= 1 required")
        if self.j1c_overlap_eval not in ("boundary", "every"):
            raise ValidationError("j1c_overlap_eval must be 'boundary' or 'every'")
        if np.any(np.asarray(self.alpha, dtype=float) <= 0):
            raise ValidationError("alpha must be positive")


@dataclass
class OctReport:
    J1: list = field(default_factory=list)
    J2: list = field(default_factory=list)
    J3: list = field(default_factory=list)
    J: list = field(default_factory=list)
    yields: list = field(default_factory=list)  # target observable at T
    field: ControlField | None = None
    trajectory: Trajectory | None = None
    converged: bool = False
    seconds: float = 0.0

    @property
    def iterations(self) -> int:
        """Number of completed iterations (index 0 is the guess)."""
        return len(self.J) - 1

    def table(self) -> np.ndarray:
        it = np.arange(len(self.J))
        return np.column_stack([it, self.J1, self.J2, self.J3, self.J, self.yields])


# --- building blocks ---------------------------------------------------------


def _target_vectors(system: BilinearSystem, kappa: int):
    if system.kind == "tdse":
        if not 0 <= kappa < len(system.D):
            raise ValidationError(f"target index {kappa} out of range")
        D = np.asarray(system.D[kappa])
        if system.C is not None and len(system.C) > kappa and np.any(system.C[kappa]):
            c = np.conj(system.C[kappa])
        else:
            c = None
        return D, c
    if not 0 <= kappa < system.n_outputs:
        raise ValidationError(f"target index {kappa} out of range")
    return None, np.conj(system.C[kappa])


def terminal_costate(system, x_T, config: OctConfig):
    """``z(T)``: ``D (x + x_e)`` for J1a, ``c`` for J1b/J1c."""
    D, c = _target_vectors(system, config.target)
    if config.functional == "J1a":
        if D is None:
            raise ValidationError("J1a needs a quadratic (TDSE) observable")
        return D @ (x_T + system.x_e)
    if c is None:
        raise ValidationError(f"{config.functional} needs a linear/overlap observable")
    return np.array(c, dtype=complex)


def target_functional(system, x_T, config: OctConfig) -> float:
    D, c = _target_vectors(system, config.target)
    if (D if config.functional == "J1a" else c) is None:
        raise ValidationError(f"{config.functional} is undefined for target {config.target} "
                              f"of a {system.kind} system")
    psi = x_T + system.x_e
    if config.functional == "J1a":
        return float(np.real(np.vdot(psi, D @ psi)))
    if config.functional == "J1b":
        return float(np.real(np.vdot(c, x_T)))
    return float(abs(np.vdot(c, psi)) ** 2)


def _ops(system):
    return operators(system)


def backward_propagate(system: BilinearSystem, fld: ControlField, z_T, grid: TimeGrid,
                       substeps: int = 10) -> np.ndarray:
    """Costate ``z`` on the substep grid, integrated from ``T`` back to ``t_0``."""
    ops = _ops(system).adjoint()
    u = fld.at(grid.substep_times(substeps))
    h = grid.delta / substeps
    z = kernels.rk4_propagate(ops, z_T, u[:, ::-1], -h, 1)
    return z[::-1]


def forward_propagate(system: BilinearSystem, fld: ControlField, x0, grid: TimeGrid,
                      substeps: int = 10) -> np.ndarray:
    """State on the substep grid with fixed-step RK4."""
    u = fld.at(grid.substep_times(substeps))
    return kernels.rk4_propagate(_ops(system), x0, u, grid.delta / substeps, 1)


def _overlap_factor(x, z, x_e):
    return np.einsum("ti,ti->t", np.conj(np.atleast_2d(x) + x_e), np.atleast_2d(z))


def field_update(z, x, system: BilinearSystem, shape, alpha, functional="J1a", eval_mode="every"):
    """``u_k = -(s_k/alpha_k) Im(F z^H N_k (x + x_e))`` sampled on the grid of ``x`` and ``z``.

    ``F`` is 1 except for J1c, where it is ``(x+x_e)^H z`` taken at every
    sample (``eval_mode='every'``) or as a single complex number (pass it via
    ``eval_mode``).
    """
    z = np.atleast_2d(z)
    x = np.atleast_2d(x)
    ops = _ops(system)
    shape = np.atleast_2d(shape)
    alpha = np.broadcast_to(np.asarray(alpha, dtype=float), (ops.m,))
    if functional == "J1c":
        F = _overlap_factor(x, z, system.x_e) if eval_mode == "every" else complex(eval_mode)
    else:
        F = 1.0
    out = np.empty((ops.m, len(x)))
    for k in range(ops.m):
        nx = (ops.N[k] @ x.T).T + ops.b[k]
        out[k] = -(shape[k] / alpha[k]) * np.imag(F * np.einsum("ti,ti->t", z.conj(), nx))
    return out


def field_derivative(z, x, system: BilinearSystem, shape, alpha):
    """Linearized time derivative ``-(s/alpha) Im(z^H (N A - A N)(x + x_e))``."""
    z = np.atleast_2d(z)
    x = np.atleast_2d(x)
    ops = _ops(system)
    shape = np.atleast_2d(shape)
    alpha = np.broadcast_to(np.asarray(alpha, dtype=float), (ops.m,))
    ax = (ops.A @ x.T).T
    out = np.empty((ops.m, len(x)))
    for k in range(ops.m):
        nx = (ops.N[k] @ x.T).T + ops.b[k]
        comm = (ops.N[k] @ ax.T).T - (ops.A @ nx.T).T
        out[k] = -(shape[k] / alpha[k]) * np.imag(np.einsum("ti,ti->t", z.conj(), comm))
    return out


def _trapezoid(y, h):
    y = np.asarray(y)
    return h * (y.sum(axis=-1) - 0.5 * (y[..., 0] + y[..., -1]))


def cost_functional(u, shape, alpha, h) -> float:
    """``sum_k alpha_k int u_k^2 / s_k dt`` (trapezoidal)."""
    u = np.atleast_2d(u)
    shape = np.atleast_2d(shape)
    zero = shape == 0
    if np.any(zero & (u != 0)):
        raise ShapeViolation("field is nonzero where the shape function vanishes")
    integrand = np.where(zero, 0.0, u**2 / np.where(zero, 1.0, shape))
    return float(np.sum(np.asarray(alpha, dtype=float) * _trapezoid(integrand, h)))


def _derivative(X, h):
    """Fourth-order finite-difference time derivative of samples ``X`` (rows = time)."""
    n = len(X)
    if n < 5:
        return np.gradient(X, h, axis=0)
    D = np.empty_like(X)
    D[2:-2] = (X[:-4] - 8 * X[1:-3] + 8 * X[3:-1] - X[4:]) / (12 * h)
    w0 = np.array([-25, 48, -36, 16, -3]) / (12 * h)
    w1 = np.array([-3, -10, 18, -6, 1]) / (12 * h)
    D[0] = w0 @ X[:5]
    D[1] = w1 @ X[:5]
    D[-1] = -(w0 @ X[-1:-6:-1])
    D[-2] = -(w1 @ X[-1:-6:-1])
    return D


def _simpson_weights(n, h):
    w = np.full(n, h)
    if n < 3:
        w[[0, -1]] = 0.5 * h
        return w
    m = n if n % 2 == 1 else n - 1  # Simpson on the first m samples, trapezoid on the rest
    w[:m] = h / 3.0 * np.where(np.arange(m) % 2 == 1, 4.0, 2.0)
    w[0] = w[m - 1] = h / 3.0
    if m < n:
        w[m - 1] += 0.5 * h
        w[-1] = 0.5 * h
    return w


def constraint_functional(system, x, z, u, h) -> float:
    """Quadrature of ``2 Re int z^H (d/dt - L)(x + x_e)``; vanishes for exact trajectories."""
    ops = _ops(system)
    X = np.atleast_2d(x)
    r = _derivative(X, h) - (ops.A @ X.T).T
    for k in range(ops.m):
        r = r - 1j * u[k][:, None] * ((ops.N[k] @ X.T).T + ops.b[k])
    integrand = np.einsum("ti,ti->t", np.conj(z), r)
    return float(2.0 * np.real(_simpson_weights(len(X), h) @ integrand))


def evaluate_functionals(system, x, u, z, shape, alpha, config: OctConfig, h):
    """``(J1, J2, J3)`` for substep-sampled state ``x``, field ``u`` and costate ``z``."""
    J1 = target_functional(system, x[-1], config)
    J2 = cost_functional(u, shape, alpha, h)
    J3 = 0.0 if z is None else constraint_functional(system, x, z, u, h)
    return J1, J2, J3


# --- the iteration -----------------------------------------------------------


def iterate(system: BilinearSystem, guess: ControlField, config: OctConfig, grid: TimeGrid,
            x0=None, callback=None) -> OctReport:
    """Alternate backward (mixing ``eta``) and forward (mixing ``zeta``) feedback sweeps."""
    t_start = time.perf_counter()
    if guess.n_channels != system.n_controls:
        raise ValidationError("guess field channel count does not match the system")
    if not np.any(guess.values):
        raise ValidationError("guess field must be nonzero somewhere")
    x0 = system.x0 if x0 is None else np.asarray(x0, dtype=complex)
    K = config.substeps
    h = grid.delta / K
    ts = grid.substep_times(K)
    alpha = np.broadcast_to(np.asarray(config.alpha, dtype=float), (system.n_controls,)).copy()
    shape = guess.shape_at(ts)
    coef = -shape / alpha[:, None]
    u = guess.at(ts)
    ops = _ops(system)
    adj = ops.adjoint()
    x = kernels.rk4_propagate(ops, x0, u, h, 1)
    report = OctReport()

    def record(x, u, z):
        J1, J2, J3 = evaluate_functionals(system, x, u, z, shape, alpha, config, h)
        J = J1 - J2 - J3
        if not np.all(np.isfinite([J1, J2, J3])):
            raise NumericalFailure("non-finite functional", report.iterations + 1)
        report.J1.append(J1)
        report.J2.append(J2)
        report.J3.append(J3)
        report.J.append(J)
        report.yields.append(float(evaluate_outputs(system, x[-1])[config.target]))
        if callback is not None:
            callback(report)

    record(x, u, None)
    j1c = config.functional == "J1c"
    every = config.j1c_overlap_eval == "every"
    mode = 0 if not j1c else (1 if every else 2)
    for n in range(1, config.max_iter + 1):
        zT = terminal_costate(system, x[-1], config)
        fT = np.vdot(x[-1] + system.x_e, zT) if j1c else 1.0
        ubar, z = kernels.oct_sweep(adj, ops, zT, x, u, coef, config.eta, h, True,
                                    mode, fT, system.x_e)
        f0 = np.vdot(x0 + system.x_e, z[0]) if j1c else 1.0
        u, x = kernels.oct_sweep(ops, ops, x0, z, ubar, coef, config.zeta, h, False,
                                 mode, f0, system.x_e)
        if not (np.all(np.isfinite(u)) and np.all(np.isfinite(x[-1]))):
            raise NumericalFailure("non-finite field or state", n)
        record(x, u, z)
        if report.J[-1] - report.J[-2] < config.tolerance:
            report.converged = True
            break

    idx = np.arange(0, len(ts), K)
    report.field = ControlField(ts[0], h, u, shape, alpha)
    report.trajectory = Trajectory(grid.times, x[idx], evaluate_outputs(system, x[idx]),
                                   list(system.labels))
    report.seconds = time.perf_counter() - t_start
    return report
