"""Dispatch layer between the numba and numpy kernel implementations."""

from __future__ import annotations

import numpy as np
import scipy.sparse as sp

from . import _accel
from . import _numba_kernels as nbk
from . import _numpy_kernels as npk


class Operators:
    """``(A, N_k, b_k)`` of ``x' = A x + i sum_k u_k (N_k x + b_k)``.

    Holds scipy CSR matrices for the numpy path and packed CSR arrays for
    the numba path.
    """

    def __init__(self, A, N, b=None):
        self.A = sp.csr_matrix(A, dtype=complex)
        self.A.sort_indices()
        self.N = [sp.csr_matrix(Nk, dtype=complex) for Nk in N]
        self.n = self.A.shape[0]
        self.m = len(self.N)
        if b is None:
            b = np.zeros((self.m, self.n), dtype=complex)
        self.b = np.ascontiguousarray(np.reshape(b, (self.m, self.n)), dtype=complex)
        self._packed = None

    @property
    def packed(self):
        if self._packed is None:
            A = self.A
            ptrs, idx, dat, offset = [], [], [], 0
            for Nk in self.N:
                ptrs.append(Nk.indptr.astype(np.int64) + offset)
                idx.append(Nk.indices.astype(np.int64))
                dat.append(Nk.data)
                offset += Nk.nnz
            n_ptr = np.array(ptrs, dtype=np.int64).reshape(self.m, self.n + 1)
            n_idx = np.concatenate(idx) if idx else np.zeros(0, np.int64)
            n_dat = np.concatenate(dat) if dat else np.zeros(0, complex)
            self._packed = (A.indptr.astype(np.int64), A.indices.astype(np.int64),
                            np.ascontiguousarray(A.data),
                            n_ptr, n_idx, np.ascontiguousarray(n_dat, dtype=complex))
        return self._packed

    def adjoint(self) -> "Operators":
        """Operators of the costate equation ``z' = (-A^H + i u N^H) z``."""
        return Operators(-self.A.conj().T, [Nk.conj().T for Nk in self.N], None)


def backend() -> str:
    return "numba" if _accel.USE_NUMBA else "numpy"


def rk4_propagate(ops: Operators, x0, u, h, every=1):
    u = np.ascontiguousarray(np.atleast_2d(u), dtype=float)
    x0 = np.asarray(x0, dtype=complex)
    if _accel.USE_NUMBA:
        return nbk.rk4_propagate(*ops.packed, ops.b, x0, u, float(h), int(every))
    return npk.rk4_propagate(ops, x0, u, h, every)


def dopri_propagate(ops: Operators, x0, u, u_t0, u_dt, times, rtol, atol, h0, h_min):
    u = np.ascontiguousarray(np.atleast_2d(u), dtype=float)
    x0 = np.asarray(x0, dtype=complex)
    times = np.asarray(times, dtype=float)
    if _accel.USE_NUMBA:
        return nbk.dopri_propagate(*ops.packed, ops.b, x0, u, float(u_t0), float(u_dt), times,
                                   float(rtol), float(atol), float(h0), float(h_min))
    return npk.dopri_propagate(ops, x0, u, u_t0, u_dt, times, rtol, atol, h0, h_min)


def oct_sweep(prop_ops: Operators, feedback_ops: Operators, start, partner, u_fixed, shape_coef,
              mix, h, backward, factor_mode=0, factor_const=1.0, x_e=None):
    """Run one feedback sweep; returns ``(field, stored_trajectory)``.

    ``feedback_ops`` are the forward operators.  A forward sweep propagates
    with them as well; a backward sweep propagates the homogeneous costate
    with ``prop_ops = feedback_ops.adjoint()``.
    """
    u_fixed = np.ascontiguousarray(np.atleast_2d(u_fixed), dtype=float)
    shape_coef = np.ascontiguousarray(np.atleast_2d(shape_coef), dtype=float)
    coef_dot = np.ascontiguousarray(np.gradient(shape_coef, h, axis=1)) if shape_coef.shape[1] > 1 \
        else np.zeros_like(shape_coef)
    start = np.asarray(start, dtype=complex)
    partner = np.ascontiguousarray(partner, dtype=complex)
    x_e = np.zeros(len(start), complex) if x_e is None else np.asarray(x_e, dtype=complex)
    store = np.empty((u_fixed.shape[1], len(start)), dtype=complex)
    if _accel.USE_NUMBA:
        fw = prop_ops.packed
        fb = feedback_ops.packed
        b = feedback_ops.b
        zero_b = np.zeros_like(b)
        field = nbk.oct_sweep(*fw[:3], *fw[3:], b, *fb[:3], *fb[3:], zero_b,
                              start, partner, u_fixed, shape_coef, coef_dot, float(mix), float(h),
                              bool(backward), int(factor_mode), complex(factor_const), x_e, store)
    else:
        field = npk.oct_sweep(prop_ops, feedback_ops, start, partner, u_fixed, shape_coef, coef_dot, mix, h,
                              backward, factor_mode, factor_const, x_e, store)
    return field, store
