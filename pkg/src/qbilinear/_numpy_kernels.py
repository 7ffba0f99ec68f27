"""Vectorised numpy/scipy versions of the propagation kernels.

Same algorithms as :mod:`qbilinear._numba_kernels`; the time loop runs in
Python and every step is a handful of sparse mat-vecs.
"""

import numpy as np

from ._numba_kernels import _A, _B4, _B5, _C


def rhs(ops, x, u):
    out = ops.A @ x
    for k, uk in enumerate(u):
        if uk != 0.0:
            out = out + 1j * uk * (ops.N[k] @ x + ops.b[k])
    return out


def rk4_step(ops, x, h, ua, um, ub):
    k1 = rhs(ops, x, ua)
    k2 = rhs(ops, x + 0.5 * h * k1, um)
    k3 = rhs(ops, x + 0.5 * h * k2, um)
    k4 = rhs(ops, x + h * k3, ub)
    return x + h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def rk4_propagate(ops, x0, u, h, every):
    n_steps = u.shape[1] - 1
    out = np.empty((n_steps // every + 1, len(x0)), dtype=complex)
    x = np.array(x0, dtype=complex)
    out[0] = x
    for j in range(n_steps):
        ua, ub = u[:, j], u[:, j + 1]
        x = rk4_step(ops, x, h, ua, 0.5 * (ua + ub), ub)
        if (j + 1) % every == 0:
            out[(j + 1) // every] = x
    return out


def _field_at(u, t0, dt, t):
    s = (t - t0) / dt
    i = min(max(int(np.floor(s)), 0), u.shape[1] - 2)
    w = s - i
    return (1.0 - w) * u[:, i] + w * u[:, i + 1]


def dopri_propagate(ops, x0, u, u_t0, u_dt, times, rtol, atol, h0, h_min):
    states = np.empty((len(times), len(x0)), dtype=complex)
    x = np.array(x0, dtype=complex)
    states[0] = x
    t, h, err_prev, accepted = times[0], h0, 1e-4, 0
    k0 = rhs(ops, x, _field_at(u, u_t0, u_dt, t))
    for jo in range(1, len(times)):
        t_end = times[jo]
        while t < t_end:
            last = t + h >= t_end
            if last:
                h = t_end - t
            ks = [k0]
            for s in range(1, 7):
                y = x + h * sum(_A[s, r] * ks[r] for r in range(s))
                ks.append(rhs(ops, y, _field_at(u, u_t0, u_dt, t + _C[s] * h)))
            e = h * sum((_B5[r] - _B4[r]) * ks[r] for r in range(7))
            scale = atol + rtol * np.maximum(np.abs(x), np.abs(y))
            err = np.sqrt(np.mean((np.abs(e) / scale) ** 2))
            if err <= 1.0:
                t = t_end if last else t + h
                x, k0 = y, ks[6]
                accepted += 1
                fac = 5.0 if err < 1e-10 else 0.9 * err ** (-0.7 / 5) * err_prev ** (0.4 / 5)
                err_prev = max(err, 1e-4)
                if not last:
                    h *= min(5.0, max(0.2, fac))
            else:
                h *= max(0.2, 0.9 * err ** (-0.2))
                if h < h_min:
                    return states, 1, accepted
        states[jo] = x
    return states, 0, accepted


def _feedback(ops, x, z, factor, factor_varies, coef, coef_dot, u_par, mix, own_is_x):
    ax = ops.A @ x
    zc = z.conj()
    nx = [ops.N[k] @ x + ops.b[k] for k in range(ops.m)]
    w = np.array([zc @ v for v in nx])
    g = coef * (factor * w).imag
    u_own = (1.0 - mix) * u_par + mix * g
    ux, uz = (u_own, u_par) if own_is_x else (u_par, u_own)
    fdot = -1j * np.sum((ux - uz) * np.conj(w)) if factor_varies else 0.0
    gdot = np.empty(ops.m)
    for k in range(ops.m):
        wd = zc @ (ops.N[k] @ ax - ops.A @ nx[k])
        for l in range(ops.m):
            wd += 1j * (ux[l] * (zc @ (ops.N[k] @ nx[l])) - uz[l] * (zc @ (ops.N[l] @ nx[k])))
        gdot[k] = coef_dot[k] * (factor * w[k]).imag + coef[k] * (factor * wd + fdot * w[k]).imag
    return g, u_own, gdot


def oct_sweep(prop_ops, feedback_ops, start, partner, u_fixed, shape_coef, shape_coef_dot, mix, h,
              backward, factor_mode, factor_const, x_e, store_out):
    m, kp1 = u_fixed.shape
    n_steps = kp1 - 1
    field = np.empty((m, kp1))
    v = np.array(start, dtype=complex)
    j, step, hh = (n_steps, -1, -h) if backward else (0, 1, h)
    store_out[j] = v
    while True:
        xs, zs = (partner[j], v) if backward else (v, partner[j])
        if factor_mode == 1:
            factor = np.vdot(xs + x_e, zs)
        elif factor_mode == 2:
            factor = factor_const
        else:
            factor = 1.0
        g, field[:, j], gdot = _feedback(feedback_ops, xs, zs, factor, factor_mode == 1,
                                         shape_coef[:, j],
                                         shape_coef_dot[:, j], u_fixed[:, j], mix, not backward)
        jn = j + step
        if jn < 0 or jn > n_steps:
            break
        um = (1.0 - mix) * 0.5 * (u_fixed[:, j] + u_fixed[:, jn]) + mix * (g + 0.5 * hh * gdot)
        ub = (1.0 - mix) * u_fixed[:, jn] + mix * (g + hh * gdot)
        v = rk4_step(prop_ops, v, hh, field[:, j], um, ub)
        j = jn
        store_out[j] = v
    return field
