"""Compiled numerical core shared by the OCP solver, the dataset labeler
and the simulator.

Everything here works on plain float64 arrays so numba can compile it in
nopython mode. Paths are ellipses ``(a cos t, b sin t)``; ``a`` and ``b``
are passed explicitly to every kernel.

Decision vector layout: ``u`` has shape ``(N, 3)`` with columns
``(s, omega, v)``. Weights ``q`` (4,) and ``r`` (3,) are the diagonals of
the state and input cost matrices.
"""

import math

import numpy as np
from numba import njit

TWO_PI = 2.0 * math.pi


# -- ellipse geometry --------------------------------------------------------

@njit(cache=True)
def ellipse_speed(a, b, theta):
    """|p'(theta)|."""
    st = math.sin(theta)
    ct = math.cos(theta)
    return math.sqrt(a * a * st * st + b * b * ct * ct)


@njit(cache=True)
def ellipse_heading(a, b, theta):
    # angle of the tangent relative to the circle tangent theta + pi/2; the
    # dot product a sin^2 + b cos^2 is always positive, so this never wraps
    st = math.sin(theta)
    ct = math.cos(theta)
    rel = math.atan2((a - b) * st * ct, a * st * st + b * ct * ct)
    return theta + 0.5 * math.pi + rel


@njit(cache=True)
def ellipse_curvature_rate(a, b, theta):
    """d p_phi / d theta, i.e. omega_r / v."""
    st = math.sin(theta)
    ct = math.cos(theta)
    return a * b / (a * a * st * st + b * b * ct * ct)


@njit(cache=True)
def wrap_angle(r):
    """Shift ``r`` by a multiple of 2 pi into (-pi, pi]."""
    k = math.ceil((r - math.pi) / TWO_PI)
    return r - TWO_PI * k


# -- plant -------------------------------------------------------------------

@njit(cache=True)
def rk4_step(z, w, dt, out):
    s = w[0]
    om = w[1]
    v = w[2]
    phi = z[2]
    # k1..k4 of the unicycle: the heading stage values are exact (linear in t)
    p1 = phi
    p2 = phi + 0.5 * dt * om
    p4 = phi + dt * om
    c = math.cos(p1) + 4.0 * math.cos(p2) + math.cos(p4)
    sn = math.sin(p1) + 4.0 * math.sin(p2) + math.sin(p4)
    out[0] = z[0] + dt * s * c / 6.0
    out[1] = z[1] + dt * s * sn / 6.0
    out[2] = phi + dt * om
    out[3] = z[3] + dt * v


@njit(cache=True)
def rollout_states(z0, u, dt, zs):
    """Fill ``zs`` (N+1, 4) with the RK4 rollout of ``u`` from ``z0``."""
    n = u.shape[0]
    zs[0, :] = z0
    for k in range(n):
        rk4_step(zs[k], u[k], dt, zs[k + 1])


# -- cost --------------------------------------------------------------------

@njit(cache=True)
def stage_cost(z, w, a, b, q, r, v_ref):
    th = z[3]
    ex = z[0] - a * math.cos(th)
    ey = z[1] - b * math.sin(th)
    ephi = wrap_angle(z[2] - ellipse_heading(a, b, th))
    g = ellipse_speed(a, b, th)
    kap = ellipse_curvature_rate(a, b, th)
    rs = w[0] - w[2] * g
    ro = w[1] - w[2] * kap
    rv = w[2] - v_ref
    return (q[0] * ex * ex + q[1] * ey * ey + q[2] * ephi * ephi + q[3] * th * th
            + r[0] * rs * rs + r[1] * ro * ro + r[2] * rv * rv)


@njit(cache=True)
def box_penalty(z, zlo, zhi, rho):
    acc = 0.0
    for i in range(4):
        if z[i] > zhi[i]:
            d = z[i] - zhi[i]
            acc += d * d
        elif z[i] < zlo[i]:
            d = zlo[i] - z[i]
            acc += d * d
    return rho * acc


@njit(cache=True)
def rollout_cost(z0, u, dt, a, b, q, r, v_ref, zlo, zhi, rho):
    n = u.shape[0]
    z = z0.copy()
    zn = np.empty(4)
    total = 0.0
    for k in range(n):
        total += stage_cost(z, u[k], a, b, q, r, v_ref)
        rk4_step(z, u[k], dt, zn)
        if rho > 0.0:
            total += box_penalty(zn, zlo, zhi, rho)
        z[:] = zn
    return total * dt


@njit(cache=True)
def rollout_gradient(z0, u, dt, a, b, q, r, v_ref, zlo, zhi, rho, grad):
    """Reverse-mode gradient of ``rollout_cost`` w.r.t. ``u``; returns J."""
    n = u.shape[0]
    zs = np.empty((n + 1, 4))
    rollout_states(z0, u, dt, zs)
    lam = np.zeros(4)
    total = 0.0
    h = dt
    for k in range(n - 1, -1, -1):
        z = zs[k]
        w = u[k]
        # penalty on z_{k+1} feeds the co-state before propagating through step k
        if rho > 0.0:
            zn = zs[k + 1]
            total += box_penalty(zn, zlo, zhi, rho)
            for i in range(4):
                if zn[i] > zhi[i]:
                    lam[i] += dt * 2.0 * rho * (zn[i] - zhi[i])
                elif zn[i] < zlo[i]:
                    lam[i] -= dt * 2.0 * rho * (zlo[i] - zn[i])
        th = z[3]
        st = math.sin(th)
        ct = math.cos(th)
        ex = z[0] - a * ct
        ey = z[1] - b * st
        ephi = wrap_angle(z[2] - ellipse_heading(a, b, th))
        g = ellipse_speed(a, b, th)
        kap = a * b / (g * g)
        dg = (a * a - b * b) * st * ct / g
        dkap = -2.0 * a * b * dg / (g * g * g)
        s = w[0]
        om = w[1]
        v = w[2]
        rs = s - v * g
        ro = om - v * kap
        rv = v - v_ref
        total += (q[0] * ex * ex + q[1] * ey * ey + q[2] * ephi * ephi
                  + q[3] * th * th + r[0] * rs * rs + r[1] * ro * ro
                  + r[2] * rv * rv)

        # stage cost partials
        lx = 2.0 * q[0] * ex
        ly = 2.0 * q[1] * ey
        lphi = 2.0 * q[2] * ephi
        lth = (2.0 * q[0] * ex * a * st - 2.0 * q[1] * ey * b * ct
               - 2.0 * q[2] * ephi * kap + 2.0 * q[3] * th
               - 2.0 * r[0] * rs * v * dg - 2.0 * r[1] * ro * v * dkap)
        ls = 2.0 * r[0] * rs
        lom = 2.0 * r[1] * ro
        lv = -2.0 * r[0] * rs * g - 2.0 * r[1] * ro * kap + 2.0 * r[2] * rv

        # step Jacobians (Simpson form of RK4 for the unicycle)
        phi = z[2]
        p2 = phi + 0.5 * h * om
        p4 = phi + h * om
        c = math.cos(phi) + 4.0 * math.cos(p2) + math.cos(p4)
        sn = math.sin(phi) + 4.0 * math.sin(p2) + math.sin(p4)
        dx_dphi = -h * s * sn / 6.0
        dy_dphi = h * s * c / 6.0
        dx_ds = h * c / 6.0
        dy_ds = h * sn / 6.0
        dx_dom = h * s / 6.0 * (-2.0 * h * math.sin(p2) - h * math.sin(p4))
        dy_dom = h * s / 6.0 * (2.0 * h * math.cos(p2) + h * math.cos(p4))

        grad[k, 0] = dt * ls + dx_ds * lam[0] + dy_ds * lam[1]
        grad[k, 1] = dt * lom + dx_dom * lam[0] + dy_dom * lam[1] + h * lam[2]
        grad[k, 2] = dt * lv + h * lam[3]

        l0 = dt * lx + lam[0]
        l1 = dt * ly + lam[1]
        l2 = dt * lphi + dx_dphi * lam[0] + dy_dphi * lam[1] + lam[2]
        l3 = dt * lth + lam[3]
        lam[0] = l0
        lam[1] = l1
        lam[2] = l2
        lam[3] = l3
    return total * dt


# -- solver ------------------------------------------------------------------

@njit(cache=True)
def project(u, lo, hi):
    n = u.shape[0]
    for k in range(n):
        for i in range(3):
            if u[k, i] < lo[i]:
                u[k, i] = lo[i]
            elif u[k, i] > hi[i]:
                u[k, i] = hi[i]


@njit(cache=True)
def reference_guess(z0, n, dt, a, b, v_ref, lo, hi, u):
    """Flatness feed-forward clipped to the box.

    Step ``k`` holds the feed-forward of the interval midpoint
    ``theta0 + (k + 1/2) dt v``, which keeps the zero-order-hold rollout
    second-order close to the path.
    """
    v = min(max(v_ref, lo[2]), hi[2])
    for k in range(n):
        th = z0[3] + (k + 0.5) * dt * v
        u[k, 0] = v * ellipse_speed(a, b, th)
        u[k, 1] = v * ellipse_curvature_rate(a, b, th)
        u[k, 2] = v
    project(u, lo, hi)


@njit(cache=True)
def solve_pg(z0, u0, dt, a, b, q, r, v_ref, lo, hi, zlo, zhi, rho,
             scale, max_iters, grad_tol, armijo_c, armijo_beta, max_backtracks,
             u_out, info):
    """Spectral projected gradient with monotone Armijo backtracking.

    ``scale`` (3,) is a fixed diagonal preconditioner per input channel.
    ``info`` receives ``(J0, J, iterations, pg_norm, status)``; status is
    0 converged, 1 max_iters, 2 line search stalled (no decrease
    representable in floating point), 3 non-finite cost.
    """
    n = u0.shape[0]
    u = u0.copy()
    project(u, lo, hi)
    g = np.empty((n, 3))
    gn = np.empty((n, 3))
    d = np.empty((n, 3))
    ut = np.empty((n, 3))
    J = rollout_gradient(z0, u, dt, a, b, q, r, v_ref, zlo, zhi, rho, g)
    info[0] = J
    status = 1
    alpha = 1.0
    it = 0
    pg = 0.0
    if not math.isfinite(J):
        u_out[:, :] = u
        info[1] = J
        info[2] = 0
        info[3] = np.inf
        info[4] = 3
        return

    for it in range(max_iters + 1):
        # scaled projected-gradient residual for termination
        pg = 0.0
        for k in range(n):
            for i in range(3):
                x = u[k, i] - scale[i] * g[k, i]
                x = min(max(x, lo[i]), hi[i])
                pg = max(pg, abs(x - u[k, i]))
        if pg <= grad_tol:
            status = 0
            break
        if it == max_iters:
            status = 1
            break

        gd = 0.0
        for k in range(n):
            for i in range(3):
                x = u[k, i] - alpha * scale[i] * g[k, i]
                x = min(max(x, lo[i]), hi[i])
                d[k, i] = x - u[k, i]
                gd += g[k, i] * d[k, i]
        if gd >= 0.0:
            status = 0
            break

        t = 1.0
        accepted = False
        for _ in range(max_backtracks):
            for k in range(n):
                for i in range(3):
                    ut[k, i] = u[k, i] + t * d[k, i]
            Jt = rollout_cost(z0, ut, dt, a, b, q, r, v_ref, zlo, zhi, rho)
            if not math.isfinite(Jt):
                t *= armijo_beta
                continue
            if Jt <= J + armijo_c * t * gd:
                accepted = True
                break
            t *= armijo_beta
        if not accepted:
            status = 2
            break

        Jn = rollout_gradient(z0, ut, dt, a, b, q, r, v_ref, zlo, zhi, rho, gn)
        # Barzilai-Borwein step in the preconditioned metric
        sy = 0.0
        ss = 0.0
        for k in range(n):
            for i in range(3):
                sk = ut[k, i] - u[k, i]
                sy += sk * (gn[k, i] - g[k, i])
                ss += sk * sk / scale[i]
        if sy > 0.0:
            alpha = min(max(ss / sy, 1e-10), 1e10)
        else:
            alpha = 1e10 if ss == 0.0 else alpha * 4.0
        u[:, :] = ut
        g[:, :] = gn
        J = Jn

    u_out[:, :] = u
    info[1] = J
    info[2] = it
    info[3] = pg
    info[4] = status


@njit(cache=True)
def label_batch(zs, n, dt, a, b, q, r, v_ref, lo, hi, zlo, zhi, rho,
                scale, max_iters, grad_tol, armijo_c, armijo_beta,
                max_backtracks, labels, status):
    """First optimal input for every row of ``zs``, cold-started at the
    reference guess. Rows are independent, so the result does not depend
    on their order."""
    m = zs.shape[0]
    for j in range(m):
        u0 = np.empty((n, 3))
        reference_guess(zs[j], n, dt, a, b, v_ref, lo, hi, u0)
        u = np.empty((n, 3))
        info = np.empty(5)
        solve_pg(zs[j], u0, dt, a, b, q, r, v_ref, lo, hi, zlo, zhi, rho,
                 scale, max_iters, grad_tol, armijo_c, armijo_beta,
                 max_backtracks, u, info)
        labels[j, :] = u[0]
        status[j] = int(info[4])
