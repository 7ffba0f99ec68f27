"""Loop kernels compiled with numba.

Operators are passed as CSR triples.  The channel operators ``N_k`` share
one ``indices``/``data`` buffer; ``n_ptr[k]`` holds the absolute row
pointers of channel ``k``.
"""

import numpy as np

from ._accel import njit

# Dormand-Prince 5(4) tableau
_C = np.array([0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0, 1.0])
_A = np.array([
    [0.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [1 / 5, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3 / 40, 9 / 40, 0.0, 0.0, 0.0, 0.0],
    [44 / 45, -56 / 15, 32 / 9, 0.0, 0.0, 0.0],
    [19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729, 0.0, 0.0],
    [9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656, 0.0],
    [35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84],
])
_B5 = np.array([35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84, 0.0])
_B4 = np.array([5179 / 57600, 0.0, 7571 / 16695, 393 / 640, -92097 / 339200, 187 / 2100, 1 / 40])


@njit
def csr_matvec(ptr, idx, dat, x, out):
    n = ptr.shape[0] - 1
    for i in range(n):
        acc = 0j
        for p in range(ptr[i], ptr[i + 1]):
            acc += dat[p] * x[idx[p]]
        out[i] = acc


@njit
def _channel_apply(n_ptr, n_idx, n_dat, k, x, out):
    n = n_ptr.shape[1] - 1
    for i in range(n):
        acc = 0j
        for p in range(n_ptr[k, i], n_ptr[k, i + 1]):
            acc += n_dat[p] * x[n_idx[p]]
        out[i] = acc


@njit
def rhs(a_ptr, a_idx, a_dat, n_ptr, n_idx, n_dat, b, x, u, out, tmp):
    """out = A x + i sum_k u_k (N_k x + b_k)."""
    csr_matvec(a_ptr, a_idx, a_dat, x, out)
    for k in range(u.shape[0]):
        if u[k] != 0.0:
            _channel_apply(n_ptr, n_idx, n_dat, k, x, tmp)
            for i in range(x.shape[0]):
                out[i] += 1j * u[k] * (tmp[i] + b[k, i])


@njit
def rk4_propagate(a_ptr, a_idx, a_dat, n_ptr, n_idx, n_dat, b, x0, u, h, every):
    """Fixed-step RK4 with linear field interpolation between samples.

    ``u`` has shape (m, K+1); states are recorded every ``every`` steps.
    """
    m, kp1 = u.shape
    n_steps = kp1 - 1
    n = x0.shape[0]
    out = np.empty((n_steps // every + 1, n), dtype=np.complex128)
    x = x0.copy()
    k1 = np.empty(n, np.complex128)
    k2 = np.empty(n, np.complex128)
    k3 = np.empty(n, np.complex128)
    k4 = np.empty(n, np.complex128)
    y = np.empty(n, np.complex128)
    tmp = np.empty(n, np.complex128)
    ua = np.empty(m)
    um = np.empty(m)
    ub = np.empty(m)
    out[0] = x
    for j in range(n_steps):
        for k in range(m):
            ua[k] = u[k, j]
            ub[k] = u[k, j + 1]
            um[k] = 0.5 * (ua[k] + ub[k])
        rhs(a_ptr, a_idx, a_dat, n_ptr, n_idx, n_dat, b, x, ua, k1, tmp)
        for i in range(n):
            y[i] = x[i] + 0.5 * h * k1[i]
        rhs(a_ptr, a_idx, a_dat, n_ptr, n_idx, n_dat, b, y, um, k2, tmp)
        for i in range(n):
            y[i] = x[i] + 0.5 * h * k2[i]
        rhs(a_ptr, a_idx, a_dat, n_ptr, n_idx, n_dat, b, y, um, k3, tmp)
        for i in range(n):
            y[i] = x[i] + h * k3[i]
        rhs(a_ptr, a_idx, a_dat, n_ptr, n_idx, n_dat, b, y, ub, k4, tmp)
        for i in range(n):
            x[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i])
        if (j + 1) % every == 0:
            out[(j + 1) // every] = x
    return out


@njit
def _field_at(u, t0, dt, t, out):
    s = (t - t0) / dt
    last = u.shape[1] - 1
    i = int(np.floor(s))
    if i < 0:
        i = 0
    if i >= last:
        i = last - 1
    w = s - i
    for k in range(u.shape[0]):
        out[k] = (1.0 - w) * u[k, i] + w * u[k, i + 1]


@njit
def dopri_propagate(a_ptr, a_idx, a_dat, n_ptr, n_idx, n_dat, b, x0, u, u_t0, u_dt,
                    times, rtol, atol, h0, h_min):
    """Embedded Dormand-Prince 5(4) with PI step control.

    Returns ``(states, status, n_accepted)``; status 1 flags step underflow.
    """
    n = x0.shape[0]
    m = u.shape[0]
    n_out = times.shape[0]
    states = np.empty((n_out, n), dtype=np.complex128)
    states[0] = x0
    x = x0.copy()
    ks = np.empty((7, n), dtype=np.complex128)
    y = np.empty(n, np.complex128)
    x5 = np.empty(n, np.complex128)
    tmp = np.empty(n, np.complex128)
    uu = np.empty(m)
    t = times[0]
    h = h0
    err_prev = 1e-4
    accepted = 0
    _field_at(u, u_t0, u_dt, t, uu)
    rhs(a_ptr, a_idx, a_dat, n_ptr, n_idx, n_dat, b, x, uu, ks[0], tmp)
    for jo in range(1, n_out):
        t_end = times[jo]
        while t < t_end:
            last = False
            if t + h >= t_end:
                h = t_end - t
                last = True
            for s in range(1, 7):
                for i in range(n):
                    acc = x[i]
                    for r in range(s):
                        acc += h * _A[s, r] * ks[r, i]
                    y[i] = acc
                _field_at(u, u_t0, u_dt, t + _C[s] * h, uu)
                rhs(a_ptr, a_idx, a_dat, n_ptr, n_idx, n_dat, b, y, uu, ks[s], tmp)
            # ks[6] is f at the 5th-order solution (FSAL); y holds that solution
            err = 0.0
            for i in range(n):
                x5[i] = y[i]
                e = 0j
                for r in range(7):
                    e += h * (_B5[r] - _B4[r]) * ks[r, i]
                sc = atol + rtol * max(abs(x[i]), abs(y[i]))
                err += (abs(e) / sc) ** 2
            err = np.sqrt(err / n)
            if err <= 1.0:
                t = t_end if last else t + h
                for i in range(n):
                    x[i] = x5[i]
                    ks[0, i] = ks[6, i]
                accepted += 1
                if err < 1e-10:
                    fac = 5.0
                else:
                    fac = 0.9 * err ** (-0.7 / 5.0) * err_prev ** (0.4 / 5.0)
                fac = min(5.0, max(0.2, fac))
                err_prev = max(err, 1e-4)
                if not last:
                    h = h * fac
            else:
                fac = max(0.2, 0.9 * err ** (-0.2))
                h = h * fac
                if h < h_min:
                    return states, 1, accepted
        states[jo] = x
    return states, 0, accepted


@njit
def _feedback(a_ptr, a_idx, a_dat, n_ptr, n_idx, n_dat, b, x, z, factor, factor_varies, coef,
              coef_dot, u_par, mix, own_is_x, g, u_own, gdot, ax, nx_all, tmp, w):
    """Mixed field ``u_own = (1-mix) u_par + mix g`` with feedback
    ``g_k = coef_k Im(F z^H (N_k x + b_k))``, and the slope of ``g``.

    The slope uses the exact derivative of ``z^H N_k psi`` when x and z are
    driven by different fields (``u_own`` drives the propagated vector,
    ``u_par`` its stored partner).  With ``factor_varies`` the overlap factor
    ``F = psi^H z`` is differentiated as well.
    """
    n = x.shape[0]
    m = u_own.shape[0]
    csr_matvec(a_ptr, a_idx, a_dat, x, ax)
    for k in range(m):
        _channel_apply(n_ptr, n_idx, n_dat, k, x, nx_all[k])
        for i in range(n):
            nx_all[k, i] += b[k, i]
    for k in range(m):
        s0 = 0j
        for i in range(n):
            s0 += np.conj(z[i]) * nx_all[k, i]
        w[k] = s0
        g[k] = coef[k] * (factor * s0).imag
        u_own[k] = (1.0 - mix) * u_par[k] + mix * g[k]
    fdot = 0j
    if factor_varies:
        for l in range(m):
            if own_is_x:
                fdot -= 1j * (u_own[l] - u_par[l]) * np.conj(w[l])
            else:
                fdot -= 1j * (u_par[l] - u_own[l]) * np.conj(w[l])
    for k in range(m):
        _channel_apply(n_ptr, n_idx, n_dat, k, ax, tmp)
        s1 = 0j
        for i in range(n):
            s1 += np.conj(z[i]) * tmp[i]
        csr_matvec(a_ptr, a_idx, a_dat, nx_all[k], tmp)
        for i in range(n):
            s1 -= np.conj(z[i]) * tmp[i]
        for l in range(m):
            if own_is_x:
                ux = u_own[l]
                uz = u_par[l]
            else:
                ux = u_par[l]
                uz = u_own[l]
            _channel_apply(n_ptr, n_idx, n_dat, k, nx_all[l], tmp)
            sa = 0j
            for i in range(n):
                sa += np.conj(z[i]) * tmp[i]
            if l == k:
                sb = sa
            else:
                _channel_apply(n_ptr, n_idx, n_dat, l, nx_all[k], tmp)
                sb = 0j
                for i in range(n):
                    sb += np.conj(z[i]) * tmp[i]
            s1 += 1j * (ux * sa - uz * sb)
        gdot[k] = coef_dot[k] * (factor * w[k]).imag + coef[k] * (factor * s1 + fdot * w[k]).imag


@njit
def _rk4_step(a_ptr, a_idx, a_dat, n_ptr, n_idx, n_dat, b, x, h, ua, um, ub,
              k1, k2, k3, k4, y, tmp):
    n = x.shape[0]
    rhs(a_ptr, a_idx, a_dat, n_ptr, n_idx, n_dat, b, x, ua, k1, tmp)
    for i in range(n):
        y[i] = x[i] + 0.5 * h * k1[i]
    rhs(a_ptr, a_idx, a_dat, n_ptr, n_idx, n_dat, b, y, um, k2, tmp)
    for i in range(n):
        y[i] = x[i] + 0.5 * h * k2[i]
    rhs(a_ptr, a_idx, a_dat, n_ptr, n_idx, n_dat, b, y, um, k3, tmp)
    for i in range(n):
        y[i] = x[i] + h * k3[i]
    rhs(a_ptr, a_idx, a_dat, n_ptr, n_idx, n_dat, b, y, ub, k4, tmp)
    for i in range(n):
        x[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i])


@njit
def oct_sweep(fw_ptr, fw_idx, fw_dat, fn_ptr, fn_idx, fn_dat, b,
              pr_ptr, pr_idx, pr_dat, pn_ptr, pn_idx, pn_dat, zero_b,
              start, partner, u_fixed, shape_coef, shape_coef_dot, mix, h, backward,
              factor_mode, factor_const, x_e, store_out):
    """One forward or backward OCT sweep with field feedback.

    The propagated vector obeys the operators ``fw_*``/``fn_*`` (with
    inhomogeneity ``b`` in forward mode, ``zero_b`` in backward mode).  The
    feedback field uses the stored ``partner`` trajectory: for a forward
    sweep ``partner`` holds z, for a backward sweep it holds the previous x.
    Feedback always uses the forward operators ``pr_*``/``pn_*`` and ``b``.

    u(t) = (1 - mix) u_fixed(t) + mix g(t), g linearised inside each step.
    factor_mode: 0 none, 1 every t, 2 constant ``factor_const``.
    """
    m, kp1 = u_fixed.shape
    n_steps = kp1 - 1
    n = start.shape[0]
    field = np.empty((m, kp1))
    k1 = np.empty(n, np.complex128)
    k2 = np.empty(n, np.complex128)
    k3 = np.empty(n, np.complex128)
    k4 = np.empty(n, np.complex128)
    y = np.empty(n, np.complex128)
    tmp = np.empty(n, np.complex128)
    ax = np.empty(n, np.complex128)
    nx_all = np.empty((m, n), np.complex128)
    w = np.empty(m, np.complex128)
    g = np.empty(m)
    gdot = np.empty(m)
    ua = np.empty(m)
    um = np.empty(m)
    ub = np.empty(m)
    coef = np.empty(m)
    coef_dot = np.empty(m)
    u_own = np.empty(m)
    u_par = np.empty(m)
    v = start.copy()
    if backward:
        j = n_steps
        step = -1
        hh = -h
    else:
        j = 0
        step = 1
        hh = h
    store_out[j] = v
    for _ in range(n_steps + 1):
        if backward:
            xs = partner[j]
            zs = v
        else:
            xs = v
            zs = partner[j]
        factor = 1.0 + 0j
        if factor_mode == 1:
            factor = 0j
            for i in range(n):
                factor += np.conj(xs[i] + x_e[i]) * zs[i]
        elif factor_mode == 2:
            factor = factor_const
        for k in range(m):
            coef[k] = shape_coef[k, j]
            coef_dot[k] = shape_coef_dot[k, j]
            u_par[k] = u_fixed[k, j]
        _feedback(pr_ptr, pr_idx, pr_dat, pn_ptr, pn_idx, pn_dat, b, xs, zs, factor,
                  factor_mode == 1, coef,
                  coef_dot, u_par, mix, not backward, g, u_own, gdot, ax, nx_all, tmp, w)
        for k in range(m):
            field[k, j] = u_own[k]
        jn = j + step
        if jn < 0 or jn > n_steps:
            break
        for k in range(m):
            ua[k] = field[k, j]
            um[k] = (1.0 - mix) * 0.5 * (u_fixed[k, j] + u_fixed[k, jn]) + mix * (g[k] + 0.5 * hh * gdot[k])
            ub[k] = (1.0 - mix) * u_fixed[k, jn] + mix * (g[k] + hh * gdot[k])
        if backward:
            _rk4_step(fw_ptr, fw_idx, fw_dat, fn_ptr, fn_idx, fn_dat, zero_b, v, hh, ua, um, ub,
                      k1, k2, k3, k4, y, tmp)
        else:
            _rk4_step(fw_ptr, fw_idx, fw_dat, fn_ptr, fn_idx, fn_dat, b, v, hh, ua, um, ub,
                      k1, k2, k3, k4, y, tmp)
        j = jn
        store_out[j] = v
    return field
