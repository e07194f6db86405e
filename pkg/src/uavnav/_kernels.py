"""Compiled inner loops for the trajectory optimizer.

The optimizer evaluates its penalized objective and gradient hundreds of
times inside a hard per-step time budget, so these loops are JIT
compiled.  Everything here works on flat float64 arrays; the readable
reference implementations live in ``model`` / ``constraints`` /
``problem`` and the test suite pins this module against them.

Gradient layout: the objective is a sum of per-state costs, per-input
costs and a penalty on constraint residuals.  Residuals depending on
predicted positions are differentiated by a reverse (adjoint) sweep
through the Euler rollout; residuals on input rates contribute directly
to the input gradient.
"""

from __future__ import annotations

import numpy as np
from numba import njit, types

# Monotonic clock readable from nopython code.  Calling back into the
# interpreter for time.perf_counter costs two orders of magnitude more
# than the solver iteration it is guarding, so bind the libc symbol
# directly (Linux: clockid 1 is CLOCK_MONOTONIC, vDSO-dispatched).  The
# timespec out-parameter is passed as the address of an int64 pair.
_clock_gettime = types.ExternalFunction(
    "clock_gettime", types.int32(types.int64, types.int64)
)
_CLOCK_MONOTONIC = 1


@njit(cache=True)
def monotonic_seconds(ts_buf):
    """Seconds from the monotonic clock; ``ts_buf`` is a scratch int64[2]."""
    _clock_gettime(_CLOCK_MONOTONIC, ts_buf.ctypes.data)
    return ts_buf[0] + 1e-9 * ts_buf[1]


@njit(cache=True)
def rollout_states(u, x0, g, ts, tau_phi, tau_theta, k_phi, k_theta, ax, ay, az):
    """Forward-Euler state trajectory, one row per node (N+1 rows)."""
    n = u.shape[0]
    states = np.empty((n + 1, 8))
    for i in range(8):
        states[0, i] = x0[i]
    for j in range(n):
        vx, vy, vz = states[j, 3], states[j, 4], states[j, 5]
        phi, theta = states[j, 6], states[j, 7]
        thrust, phi_ref, theta_ref = u[j, 0], u[j, 1], u[j, 2]
        cphi, sphi = np.cos(phi), np.sin(phi)
        cth, sth = np.cos(theta), np.sin(theta)
        states[j + 1, 0] = states[j, 0] + ts * vx
        states[j + 1, 1] = states[j, 1] + ts * vy
        states[j + 1, 2] = states[j, 2] + ts * vz
        states[j + 1, 3] = vx + ts * (thrust * cphi * sth - ax * vx)
        states[j + 1, 4] = vy + ts * (-thrust * sphi - ay * vy)
        states[j + 1, 5] = vz + ts * (thrust * cphi * cth - g - az * vz)
        states[j + 1, 6] = phi + ts * ((k_phi * phi_ref - phi) / tau_phi)
        states[j + 1, 7] = theta + ts * ((k_theta * theta_ref - theta) / tau_theta)
    return states


@njit(cache=True)
def penalized_value_grad(
    u,
    x0,
    x_ref,
    u_ref,
    u_prev,
    qx,
    qu,
    qdu,
    circles,
    rects,
    dphi_max,
    dtheta_max,
    qpen,
    g,
    ts,
    tau_phi,
    tau_theta,
    k_phi,
    k_theta,
    ax,
    ay,
    az,
):
    """Penalized objective value, bare cost, penalty sum and full gradient.

    Returns ``(value, cost, penalty, grad)`` with value = cost +
    qpen * penalty and grad of shape (N, 3) w.r.t. the input sequence.
    """
    n = u.shape[0]
    ns = n + 1
    states = rollout_states(u, x0, g, ts, tau_phi, tau_theta, k_phi, k_theta, ax, ay, az)

    # quadratic tracking cost
    cost = 0.0
    for j in range(ns):
        for i in range(8):
            e = states[j, i] - x_ref[i]
            cost += qx[i] * e * e
    for j in range(n):
        for i in range(3):
            e = u[j, i] - u_ref[i]
            cost += qu[i] * e * e
        for i in range(3):
            prev = u_prev[i] if j == 0 else u[j - 1, i]
            d = u[j, i] - prev
            cost += qdu[i] * d * d

    # obstacle penalty: squared residuals, and d(penalty)/d(position)
    pen = 0.0
    gpos = np.zeros((ns, 2))
    nc = circles.shape[0]
    nr = rects.shape[0]
    for j in range(ns):
        px, py = states[j, 0], states[j, 1]
        gx, gy = 0.0, 0.0
        for i in range(nc):
            dx = px - circles[i, 0]
            dy = py - circles[i, 1]
            r = circles[i, 2]
            h = r * r - dx * dx - dy * dy
            if h > 0.0:
                pen += h * h
                gx -= 4.0 * h * dx
                gy -= 4.0 * h * dy
        for i in range(nr):
            g0 = rects[i, 0] * px + rects[i, 1] * py + rects[i, 8]
            g1 = rects[i, 2] * px + rects[i, 3] * py + rects[i, 9]
            g2 = rects[i, 4] * px + rects[i, 5] * py + rects[i, 10]
            g3 = rects[i, 6] * px + rects[i, 7] * py + rects[i, 11]
            if g0 > 0.0 and g1 > 0.0 and g2 > 0.0 and g3 > 0.0:
                h = g0 * g1 * g2 * g3
                pen += h * h
                c01 = g0 * g1
                c23 = g2 * g3
                dhx = (
                    rects[i, 0] * g1 * c23
                    + rects[i, 2] * g0 * c23
                    + rects[i, 4] * c01 * g3
                    + rects[i, 6] * c01 * g2
                )
                dhy = (
                    rects[i, 1] * g1 * c23
                    + rects[i, 3] * g0 * c23
                    + rects[i, 5] * c01 * g3
                    + rects[i, 7] * c01 * g2
                )
                gx += 2.0 * h * dhx
                gy += 2.0 * h * dhy
        gpos[j, 0] = gx
        gpos[j, 1] = gy

    grad = np.zeros((n, 3))

    # input-rate penalty contributes directly to the input gradient
    for j in range(n):
        prev_phi = u_prev[1] if j == 0 else u[j - 1, 1]
        prev_theta = u_prev[2] if j == 0 else u[j - 1, 2]
        dphi = u[j, 1] - prev_phi
        dtheta = u[j, 2] - prev_theta
        gphi, gtheta = 0.0, 0.0
        r = dphi - dphi_max
        if r > 0.0:
            pen += r * r
            gphi += 2.0 * r
        r = -dphi - dphi_max
        if r > 0.0:
            pen += r * r
            gphi -= 2.0 * r
        r = dtheta - dtheta_max
        if r > 0.0:
            pen += r * r
            gtheta += 2.0 * r
        r = -dtheta - dtheta_max
        if r > 0.0:
            pen += r * r
            gtheta -= 2.0 * r
        grad[j, 1] += qpen * gphi
        grad[j, 2] += qpen * gtheta
        if j > 0:
            grad[j - 1, 1] -= qpen * gphi
            grad[j - 1, 2] -= qpen * gtheta

    # direct input-cost gradient
    for j in range(n):
        for i in range(3):
            grad[j, i] += 2.0 * qu[i] * (u[j, i] - u_ref[i])
        for i in range(3):
            prev = u_prev[i] if j == 0 else u[j - 1, i]
            d = u[j, i] - prev
            grad[j, i] += 2.0 * qdu[i] * d
            if j > 0:
                grad[j - 1, i] -= 2.0 * qdu[i] * d

    # adjoint sweep for everything that reaches the inputs through the states
    lam = np.zeros(8)
    for j in range(ns - 1, -1, -1):
        for i in range(8):
            lam[i] += 2.0 * qx[i] * (states[j, i] - x_ref[i])
        lam[0] += qpen * gpos[j, 0]
        lam[1] += qpen * gpos[j, 1]
        if j == 0:
            break
        phi, theta = states[j - 1, 6], states[j - 1, 7]
        thrust = u[j - 1, 0]
        cphi, sphi = np.cos(phi), np.sin(phi)
        cth, sth = np.cos(theta), np.sin(theta)
        grad[j - 1, 0] += ts * (cphi * sth * lam[3] - sphi * lam[4] + cphi * cth * lam[5])
        grad[j - 1, 1] += ts * (k_phi / tau_phi) * lam[6]
        grad[j - 1, 2] += ts * (k_theta / tau_theta) * lam[7]
        nl3 = lam[3] * (1.0 - ts * ax) + ts * lam[0]
        nl4 = lam[4] * (1.0 - ts * ay) + ts * lam[1]
        nl5 = lam[5] * (1.0 - ts * az) + ts * lam[2]
        nl6 = lam[6] * (1.0 - ts / tau_phi) + ts * thrust * (
            -sphi * sth * lam[3] - cphi * lam[4] - sphi * cth * lam[5]
        )
        nl7 = lam[7] * (1.0 - ts / tau_theta) + ts * thrust * (
            cphi * cth * lam[3] - cphi * sth * lam[5]
        )
        lam[3], lam[4], lam[5], lam[6], lam[7] = nl3, nl4, nl5, nl6, nl7

    value = cost + qpen * pen
    return value, cost, pen, grad


@njit(cache=True)
def penalized_value(
    u,
    x0,
    x_ref,
    u_ref,
    u_prev,
    qx,
    qu,
    qdu,
    circles,
    rects,
    dphi_max,
    dtheta_max,
    qpen,
    g,
    ts,
    tau_phi,
    tau_theta,
    k_phi,
    k_theta,
    ax,
    ay,
    az,
):
    """Penalized objective value only, skipping all gradient work.

    Accumulates cost and penalty in the same order as
    ``penalized_value_grad`` so both return bitwise identical values.
    """
    n = u.shape[0]
    ns = n + 1
    states = rollout_states(u, x0, g, ts, tau_phi, tau_theta, k_phi, k_theta, ax, ay, az)

    cost = 0.0
    for j in range(ns):
        for i in range(8):
            e = states[j, i] - x_ref[i]
            cost += qx[i] * e * e
    for j in range(n):
        for i in range(3):
            e = u[j, i] - u_ref[i]
            cost += qu[i] * e * e
        for i in range(3):
            prev = u_prev[i] if j == 0 else u[j - 1, i]
            d = u[j, i] - prev
            cost += qdu[i] * d * d

    pen = 0.0
    nc = circles.shape[0]
    nr = rects.shape[0]
    for j in range(ns):
        px, py = states[j, 0], states[j, 1]
        for i in range(nc):
            dx = px - circles[i, 0]
            dy = py - circles[i, 1]
            r = circles[i, 2]
            h = r * r - dx * dx - dy * dy
            if h > 0.0:
                pen += h * h
        for i in range(nr):
            g0 = rects[i, 0] * px + rects[i, 1] * py + rects[i, 8]
            g1 = rects[i, 2] * px + rects[i, 3] * py + rects[i, 9]
            g2 = rects[i, 4] * px + rects[i, 5] * py + rects[i, 10]
            g3 = rects[i, 6] * px + rects[i, 7] * py + rects[i, 11]
            if g0 > 0.0 and g1 > 0.0 and g2 > 0.0 and g3 > 0.0:
                h = g0 * g1 * g2 * g3
                pen += h * h
    for j in range(n):
        prev_phi = u_prev[1] if j == 0 else u[j - 1, 1]
        prev_theta = u_prev[2] if j == 0 else u[j - 1, 2]
        dphi = u[j, 1] - prev_phi
        dtheta = u[j, 2] - prev_theta
        r = dphi - dphi_max
        if r > 0.0:
            pen += r * r
        r = -dphi - dphi_max
        if r > 0.0:
            pen += r * r
        r = dtheta - dtheta_max
        if r > 0.0:
            pen += r * r
        r = -dtheta - dtheta_max
        if r > 0.0:
            pen += r * r

    return cost + qpen * pen


@njit(cache=True)
def constraint_norms(
    u,
    x0,
    u_prev,
    circles,
    rects,
    dphi_max,
    dtheta_max,
    g,
    ts,
    tau_phi,
    tau_theta,
    k_phi,
    k_theta,
    ax,
    ay,
    az,
):
    """(max residual, Euclidean norm) of the constraint vector G."""
    n = u.shape[0]
    ns = n + 1
    states = rollout_states(u, x0, g, ts, tau_phi, tau_theta, k_phi, k_theta, ax, ay, az)
    gmax = 0.0
    gsq = 0.0
    nc = circles.shape[0]
    nr = rects.shape[0]
    for j in range(ns):
        px, py = states[j, 0], states[j, 1]
        for i in range(nc):
            dx = px - circles[i, 0]
            dy = py - circles[i, 1]
            r = circles[i, 2]
            h = r * r - dx * dx - dy * dy
            if h > 0.0:
                gsq += h * h
                if h > gmax:
                    gmax = h
        for i in range(nr):
            g0 = rects[i, 0] * px + rects[i, 1] * py + rects[i, 8]
            g1 = rects[i, 2] * px + rects[i, 3] * py + rects[i, 9]
            g2 = rects[i, 4] * px + rects[i, 5] * py + rects[i, 10]
            g3 = rects[i, 6] * px + rects[i, 7] * py + rects[i, 11]
            if g0 > 0.0 and g1 > 0.0 and g2 > 0.0 and g3 > 0.0:
                h = g0 * g1 * g2 * g3
                gsq += h * h
                if h > gmax:
                    gmax = h
    for j in range(n):
        prev_phi = u_prev[1] if j == 0 else u[j - 1, 1]
        prev_theta = u_prev[2] if j == 0 else u[j - 1, 2]
        for pair in range(2):
            if pair == 0:
                d = u[j, 1] - prev_phi
                dmax = dphi_max
            else:
                d = u[j, 2] - prev_theta
                dmax = dtheta_max
            r = d - dmax
            if r > 0.0:
                gsq += r * r
                if r > gmax:
                    gmax = r
            r = -d - dmax
            if r > 0.0:
                gsq += r * r
                if r > gmax:
                    gmax = r
    return gmax, np.sqrt(gsq)


@njit(cache=True)
def _clip_box(z, lower, upper):
    out = np.empty_like(z)
    for i in range(z.shape[0]):
        v = z[i]
        if v < lower[i]:
            v = lower[i]
        elif v > upper[i]:
            v = upper[i]
        out[i] = v
    return out


@njit(cache=True)
def _penalized_flat(
    z,
    nsteps,
    x0,
    x_ref,
    u_ref,
    u_prev,
    qx,
    qu,
    qdu,
    circles,
    rects,
    dphi_max,
    dtheta_max,
    qpen,
    g,
    ts,
    tau_phi,
    tau_theta,
    k_phi,
    k_theta,
    ax,
    ay,
    az,
):
    u = np.ascontiguousarray(z).reshape(nsteps, 3)
    value, _cost, _pen, grad = penalized_value_grad(
        u, x0, x_ref, u_ref, u_prev, qx, qu, qdu, circles, rects,
        dphi_max, dtheta_max, qpen,
        g, ts, tau_phi, tau_theta, k_phi, k_theta, ax, ay, az,
    )
    return value, grad.ravel()


@njit(cache=True)
def panoc_stage(
    z0,
    x0,
    x_ref,
    u_ref,
    u_prev,
    qx,
    qu,
    qdu,
    circles,
    rects,
    dphi_max,
    dtheta_max,
    qpen,
    g,
    ts,
    tau_phi,
    tau_theta,
    k_phi,
    k_theta,
    ax,
    ay,
    az,
    lower,
    upper,
    fpr_tol,
    max_iters,
    lbfgs_mem,
    time_budget,
):
    """One penalty stage, compiled: same algorithm as ``solver.panoc_solve``.

    Projected-gradient point, L-BFGS direction on the fixed-point
    residual history, forward-backward envelope line search, adaptive
    step size.  ``time_budget`` is in seconds from entry, checked once
    per inner iteration; pass a negative value for no budget.  Returns
    (z, fpr, iterations, converged_flag).

    The evaluation budget is what makes this worth compiling: one
    value-only call at the projected-gradient point plus one
    value-and-gradient call per accepted line-search candidate, with the
    candidate's gradient carried over as the next iterate's.
    """
    alpha = 0.95
    gamma_min = 1e-14
    nvars = z0.shape[0]
    nsteps = nvars // 3
    ts_buf = np.empty(2, np.int64)
    t_start = monotonic_seconds(ts_buf)

    z = _clip_box(z0, lower, upper)
    fz, gz = _penalized_flat(
        z, nsteps, x0, x_ref, u_ref, u_prev, qx, qu, qdu, circles, rects,
        dphi_max, dtheta_max, qpen, g, ts, tau_phi, tau_theta,
        k_phi, k_theta, ax, ay, az,
    )

    # finite-difference Lipschitz probe pointing into the box
    delta = np.empty(nvars)
    for i in range(nvars):
        step = 1e-6 * max(1.0, abs(z[i]))
        if upper[i] - z[i] >= z[i] - lower[i]:
            delta[i] = step
        else:
            delta[i] = -step
    _fp, gp = _penalized_flat(
        z + delta, nsteps, x0, x_ref, u_ref, u_prev, qx, qu, qdu, circles,
        rects, dphi_max, dtheta_max, qpen, g, ts, tau_phi, tau_theta,
        k_phi, k_theta, ax, ay, az,
    )
    num = 0.0
    den = 0.0
    for i in range(nvars):
        diff = gp[i] - gz[i]
        num += diff * diff
        den += delta[i] * delta[i]
    lips = max(np.sqrt(num / den), 1e-10)
    gamma = min(alpha / lips, 1e6)

    s_buf = np.zeros((lbfgs_mem, nvars))
    y_buf = np.zeros((lbfgs_mem, nvars))
    rho_buf = np.zeros(lbfgs_mem)
    n_pairs = 0
    z_prev = np.zeros(nvars)
    r_prev = np.zeros(nvars)
    have_prev = False

    zbar = np.empty(nvars)
    dz = np.empty(nvars)
    residual = np.empty(nvars)
    s_tmp = np.empty(nvars)
    y_tmp = np.empty(nvars)
    d = np.empty(nvars)
    cand = np.empty(nvars)
    alphas = np.zeros(lbfgs_mem)
    gzbar = gz
    iters = 0

    while True:
        dz_sq = 0.0
        gdz = 0.0
        for i in range(nvars):
            v = z[i] - gamma * gz[i]
            if v < lower[i]:
                v = lower[i]
            elif v > upper[i]:
                v = upper[i]
            zbar[i] = v
            dz[i] = v - z[i]
            dz_sq += dz[i] * dz[i]
            gdz += gz[i] * dz[i]
        if n_pairs == 0:
            # gradient needed anyway for the projected-gradient step
            fzbar, gzbar = _penalized_flat(
                zbar, nsteps, x0, x_ref, u_ref, u_prev, qx, qu, qdu, circles,
                rects, dphi_max, dtheta_max, qpen, g, ts, tau_phi, tau_theta,
                k_phi, k_theta, ax, ay, az,
            )
            have_gzbar = True
        else:
            u2 = np.ascontiguousarray(zbar).reshape(nsteps, 3)
            fzbar = penalized_value(
                u2, x0, x_ref, u_ref, u_prev, qx, qu, qdu, circles, rects,
                dphi_max, dtheta_max, qpen, g, ts, tau_phi, tau_theta,
                k_phi, k_theta, ax, ay, az,
            )
            have_gzbar = False
        while (
            fzbar > fz + gdz + (alpha / (2.0 * gamma)) * dz_sq + 1e-10 * (1.0 + abs(fz))
            and gamma > gamma_min
        ):
            gamma *= 0.5
            n_pairs = 0
            have_prev = False
            dz_sq = 0.0
            gdz = 0.0
            for i in range(nvars):
                v = z[i] - gamma * gz[i]
                if v < lower[i]:
                    v = lower[i]
                elif v > upper[i]:
                    v = upper[i]
                zbar[i] = v
                dz[i] = v - z[i]
                dz_sq += dz[i] * dz[i]
                gdz += gz[i] * dz[i]
            fzbar, gzbar = _penalized_flat(
                zbar, nsteps, x0, x_ref, u_ref, u_prev, qx, qu, qdu, circles,
                rects, dphi_max, dtheta_max, qpen, g, ts, tau_phi, tau_theta,
                k_phi, k_theta, ax, ay, az,
            )
            have_gzbar = True

        fpr = np.sqrt(dz_sq) / gamma
        if fpr <= fpr_tol:
            return zbar.copy(), fpr, iters, 1
        if iters >= max_iters:
            return zbar.copy(), fpr, iters, 0
        if time_budget > 0.0:
            if monotonic_seconds(ts_buf) - t_start >= time_budget:
                return zbar.copy(), fpr, iters, 0

        iters += 1
        for i in range(nvars):
            residual[i] = (z[i] - zbar[i]) / gamma
        if have_prev:
            sy = 0.0
            s_nrm = 0.0
            y_nrm = 0.0
            for i in range(nvars):
                si = z[i] - z_prev[i]
                yi = residual[i] - r_prev[i]
                s_tmp[i] = si
                y_tmp[i] = yi
                sy += si * yi
                s_nrm += si * si
                y_nrm += yi * yi
            if sy > 1e-12 * np.sqrt(s_nrm) * np.sqrt(y_nrm):
                if n_pairs == lbfgs_mem:
                    for k in range(lbfgs_mem - 1):
                        for i in range(nvars):
                            s_buf[k, i] = s_buf[k + 1, i]
                            y_buf[k, i] = y_buf[k + 1, i]
                        rho_buf[k] = rho_buf[k + 1]
                    n_pairs -= 1
                for i in range(nvars):
                    s_buf[n_pairs, i] = s_tmp[i]
                    y_buf[n_pairs, i] = y_tmp[i]
                rho_buf[n_pairs] = 1.0 / sy
                n_pairs += 1
        for i in range(nvars):
            z_prev[i] = z[i]
            r_prev[i] = residual[i]
        have_prev = True

        if n_pairs == 0:
            # no curvature information yet: plain projected-gradient step
            tmp = z
            z = zbar
            zbar = tmp
            fz = fzbar
            gz = gzbar
            continue

        # two-loop recursion, H0 scaled by the newest pair
        for i in range(nvars):
            d[i] = residual[i]
        for k in range(n_pairs - 1, -1, -1):
            a = 0.0
            for i in range(nvars):
                a += s_buf[k, i] * d[i]
            a *= rho_buf[k]
            alphas[k] = a
            for i in range(nvars):
                d[i] -= a * y_buf[k, i]
        sy_last = 0.0
        yy_last = 0.0
        for i in range(nvars):
            sy_last += s_buf[n_pairs - 1, i] * y_buf[n_pairs - 1, i]
            yy_last += y_buf[n_pairs - 1, i] * y_buf[n_pairs - 1, i]
        scale = sy_last / yy_last
        for i in range(nvars):
            d[i] *= scale
        for k in range(n_pairs):
            b = 0.0
            for i in range(nvars):
                b += y_buf[k, i] * d[i]
            b *= rho_buf[k]
            diff = alphas[k] - b
            for i in range(nvars):
                d[i] += diff * s_buf[k, i]
        for i in range(nvars):
            d[i] = -d[i]

        envelope = fz + gdz + dz_sq / (2.0 * gamma)
        decrease = 0.5 * (1.0 - alpha) * gamma * fpr * fpr
        tau = 1.0
        accepted = False
        for _bt in range(10):
            for i in range(nvars):
                v = z[i] + (1.0 - tau) * dz[i] + tau * d[i]
                if v < lower[i]:
                    v = lower[i]
                elif v > upper[i]:
                    v = upper[i]
                cand[i] = v
            fc, gc = _penalized_flat(
                cand, nsteps, x0, x_ref, u_ref, u_prev, qx, qu, qdu, circles,
                rects, dphi_max, dtheta_max, qpen, g, ts, tau_phi, tau_theta,
                k_phi, k_theta, ax, ay, az,
            )
            cand_env = fc
            cdz_sq = 0.0
            for i in range(nvars):
                v = cand[i] - gamma * gc[i]
                if v < lower[i]:
                    v = lower[i]
                elif v > upper[i]:
                    v = upper[i]
                cdz = v - cand[i]
                cand_env += gc[i] * cdz
                cdz_sq += cdz * cdz
            cand_env += cdz_sq / (2.0 * gamma)
            if cand_env <= envelope - decrease:
                tmp = z
                z = cand
                cand = tmp
                fz = fc
                gz = gc
                accepted = True
                break
            tau *= 0.5
        if not accepted:
            if not have_gzbar:
                _f2, gzbar = _penalized_flat(
                    zbar, nsteps, x0, x_ref, u_ref, u_prev, qx, qu, qdu,
                    circles, rects, dphi_max, dtheta_max, qpen, g, ts,
                    tau_phi, tau_theta, k_phi, k_theta, ax, ay, az,
                )
            tmp = z
            z = zbar
            zbar = tmp
            fz = fzbar
            gz = gzbar
