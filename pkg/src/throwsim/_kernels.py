"""Compiled per-environment kernels behind the dynamics and kinematics API.

Each ``*_batch`` function loops over a flat batch of configurations and
calls a scalar kernel; model data is passed as the plain arrays produced by
:func:`model_arrays`.
"""

from __future__ import annotations

import numpy as np
from numba import njit


def model_arrays(model):
    return (
        np.ascontiguousarray(model.axes),
        np.ascontiguousarray(model.origins),
        np.ascontiguousarray(model.prismatic),
        np.ascontiguousarray(model.masses),
        np.ascontiguousarray(model.coms),
        np.ascontiguousarray(model.inertias),
        float(model.base_height),
        float(model.gravity),
    )


@njit(cache=True, inline="always")
def _cross(a0, a1, a2, b0, b1, b2):
    return a1 * b2 - a2 * b1, a2 * b0 - a0 * b2, a0 * b1 - a1 * b0


@njit(cache=True)
def _frames_one(axes, origins, prismatic, base_height, q, pos, rot, zax):
    p0, p1, p2 = 0.0, 0.0, base_height
    r00, r01, r02, r10, r11, r12, r20, r21, r22 = 1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0
    for i in range(6):
        o = origins[i]
        p0 += r00 * o[0] + r01 * o[1] + r02 * o[2]
        p1 += r10 * o[0] + r11 * o[1] + r12 * o[2]
        p2 += r20 * o[0] + r21 * o[1] + r22 * o[2]
        x, y, zz = axes[i, 0], axes[i, 1], axes[i, 2]
        z0 = r00 * x + r01 * y + r02 * zz
        z1 = r10 * x + r11 * y + r12 * zz
        z2 = r20 * x + r21 * y + r22 * zz
        zax[i, 0] = z0
        zax[i, 1] = z1
        zax[i, 2] = z2
        if prismatic[i]:
            p0 += z0 * q[i]
            p1 += z1 * q[i]
            p2 += z2 * q[i]
        else:
            # Rodrigues: J = I + s K + (1 - c) K^2
            s = np.sin(q[i])
            c = 1.0 - np.cos(q[i])
            j00 = 1.0 - c * (y * y + zz * zz)
            j01 = -s * zz + c * x * y
            j02 = s * y + c * x * zz
            j10 = s * zz + c * x * y
            j11 = 1.0 - c * (x * x + zz * zz)
            j12 = -s * x + c * y * zz
            j20 = -s * y + c * x * zz
            j21 = s * x + c * y * zz
            j22 = 1.0 - c * (x * x + y * y)
            r00, r01, r02 = (
                r00 * j00 + r01 * j10 + r02 * j20,
                r00 * j01 + r01 * j11 + r02 * j21,
                r00 * j02 + r01 * j12 + r02 * j22,
            )
            r10, r11, r12 = (
                r10 * j00 + r11 * j10 + r12 * j20,
                r10 * j01 + r11 * j11 + r12 * j21,
                r10 * j02 + r11 * j12 + r12 * j22,
            )
            r20, r21, r22 = (
                r20 * j00 + r21 * j10 + r22 * j20,
                r20 * j01 + r21 * j11 + r22 * j21,
                r20 * j02 + r21 * j12 + r22 * j22,
            )
        pos[i, 0] = p0
        pos[i, 1] = p1
        pos[i, 2] = p2
        rot[i, 0, 0], rot[i, 0, 1], rot[i, 0, 2] = r00, r01, r02
        rot[i, 1, 0], rot[i, 1, 1], rot[i, 1, 2] = r10, r11, r12
        rot[i, 2, 0], rot[i, 2, 1], rot[i, 2, 2] = r20, r21, r22


@njit(cache=True)
def frames_batch(axes, origins, prismatic, base_height, q):
    n = q.shape[0]
    pos = np.empty((n, 6, 3))
    rot = np.empty((n, 6, 3, 3))
    zax = np.empty((n, 6, 3))
    for k in range(n):
        _frames_one(axes, origins, prismatic, base_height, q[k], pos[k], rot[k], zax[k])
    return pos, rot, zax


@njit(cache=True)
def _body_terms(coms, inertias, pos, rot, cw, iw):
    """World CoM positions and world inertias ``R I R^T`` of all links."""
    for i in range(6):
        r = rot[i]
        c = coms[i]
        ib = inertias[i]
        for u in range(3):
            cw[i, u] = pos[i, u] + r[u, 0] * c[0] + r[u, 1] * c[1] + r[u, 2] * c[2]
        for u in range(3):
            t0 = r[u, 0] * ib[0, 0] + r[u, 1] * ib[1, 0] + r[u, 2] * ib[2, 0]
            t1 = r[u, 0] * ib[0, 1] + r[u, 1] * ib[1, 1] + r[u, 2] * ib[2, 1]
            t2 = r[u, 0] * ib[0, 2] + r[u, 1] * ib[1, 2] + r[u, 2] * ib[2, 2]
            for v in range(u, 3):
                val = t0 * r[v, 0] + t1 * r[v, 1] + t2 * r[v, 2]
                iw[i, u, v] = val
                iw[i, v, u] = val


@njit(cache=True)
def _rnea_one(prismatic, masses, base_height, gvec, pos, zax, cw, iw, dq, ddq, tau, work):
    w = work[0]
    dw = work[1]
    acc = work[2]
    f = work[3]
    n = work[4]
    fo = work[5:11]
    mo = work[11:17]
    for u in range(3):
        w[u] = 0.0
        dw[u] = 0.0
        acc[u] = 0.0
        f[u] = 0.0
        n[u] = 0.0
    acc[2] = gvec
    pp0, pp1, pp2 = 0.0, 0.0, base_height
    for i in range(6):
        z0, z1, z2 = zax[i, 0], zax[i, 1], zax[i, 2]
        d0, d1, d2 = pos[i, 0] - pp0, pos[i, 1] - pp1, pos[i, 2] - pp2
        c0, c1, c2 = _cross(dw[0], dw[1], dw[2], d0, d1, d2)
        e0, e1, e2 = _cross(w[0], w[1], w[2], d0, d1, d2)
        f0, f1, f2 = _cross(w[0], w[1], w[2], e0, e1, e2)
        acc[0] += c0 + f0
        acc[1] += c1 + f1
        acc[2] += c2 + f2
        if prismatic[i]:
            g0, g1, g2 = _cross(w[0], w[1], w[2], z0 * dq[i], z1 * dq[i], z2 * dq[i])
            acc[0] += 2.0 * g0 + z0 * ddq[i]
            acc[1] += 2.0 * g1 + z1 * ddq[i]
            acc[2] += 2.0 * g2 + z2 * ddq[i]
        else:
            g0, g1, g2 = _cross(w[0], w[1], w[2], z0 * dq[i], z1 * dq[i], z2 * dq[i])
            dw[0] += z0 * ddq[i] + g0
            dw[1] += z1 * ddq[i] + g1
            dw[2] += z2 * ddq[i] + g2
            w[0] += z0 * dq[i]
            w[1] += z1 * dq[i]
            w[2] += z2 * dq[i]
        r0, r1, r2 = cw[i, 0] - pos[i, 0], cw[i, 1] - pos[i, 1], cw[i, 2] - pos[i, 2]
        c0, c1, c2 = _cross(dw[0], dw[1], dw[2], r0, r1, r2)
        e0, e1, e2 = _cross(w[0], w[1], w[2], r0, r1, r2)
        f0, f1, f2 = _cross(w[0], w[1], w[2], e0, e1, e2)
        m = masses[i]
        fo[i, 0] = m * (acc[0] + c0 + f0)
        fo[i, 1] = m * (acc[1] + c1 + f1)
        fo[i, 2] = m * (acc[2] + c2 + f2)
        ii = iw[i]
        iw0 = ii[0, 0] * w[0] + ii[0, 1] * w[1] + ii[0, 2] * w[2]
        iw1 = ii[1, 0] * w[0] + ii[1, 1] * w[1] + ii[1, 2] * w[2]
        iw2 = ii[2, 0] * w[0] + ii[2, 1] * w[1] + ii[2, 2] * w[2]
        h0, h1, h2 = _cross(w[0], w[1], w[2], iw0, iw1, iw2)
        mo[i, 0] = ii[0, 0] * dw[0] + ii[0, 1] * dw[1] + ii[0, 2] * dw[2] + h0
        mo[i, 1] = ii[1, 0] * dw[0] + ii[1, 1] * dw[1] + ii[1, 2] * dw[2] + h1
        mo[i, 2] = ii[2, 0] * dw[0] + ii[2, 1] * dw[1] + ii[2, 2] * dw[2] + h2
        pp0, pp1, pp2 = pos[i, 0], pos[i, 1], pos[i, 2]

    for i in range(5, -1, -1):
        r0, r1, r2 = cw[i, 0] - pos[i, 0], cw[i, 1] - pos[i, 1], cw[i, 2] - pos[i, 2]
        a0, a1, a2 = _cross(r0, r1, r2, fo[i, 0], fo[i, 1], fo[i, 2])
        if i < 5:
            d0, d1, d2 = pos[i + 1, 0] - pos[i, 0], pos[i + 1, 1] - pos[i, 1], pos[i + 1, 2] - pos[i, 2]
            b0, b1, b2 = _cross(d0, d1, d2, f[0], f[1], f[2])
            n[0] += b0
            n[1] += b1
            n[2] += b2
        n[0] += mo[i, 0] + a0
        n[1] += mo[i, 1] + a1
        n[2] += mo[i, 2] + a2
        f[0] += fo[i, 0]
        f[1] += fo[i, 1]
        f[2] += fo[i, 2]
        if prismatic[i]:
            tau[i] = zax[i, 0] * f[0] + zax[i, 1] * f[1] + zax[i, 2] * f[2]
        else:
            tau[i] = zax[i, 0] * n[0] + zax[i, 1] * n[1] + zax[i, 2] * n[2]


@njit(cache=True)
def _crba_one(prismatic, masses, pos, zax, cw, iw, out, work):
    sa = work[0:6]
    sl = work[6:12]
    h = work[12]
    io = work[13:16]
    for i in range(6):
        if prismatic[i]:
            sa[i, 0] = 0.0
            sa[i, 1] = 0.0
            sa[i, 2] = 0.0
            sl[i, 0], sl[i, 1], sl[i, 2] = zax[i, 0], zax[i, 1], zax[i, 2]
        else:
            sa[i, 0], sa[i, 1], sa[i, 2] = zax[i, 0], zax[i, 1], zax[i, 2]
            sl[i, 0], sl[i, 1], sl[i, 2] = _cross(pos[i, 0], pos[i, 1], pos[i, 2], zax[i, 0], zax[i, 1], zax[i, 2])
    mass = 0.0
    for u in range(3):
        h[u] = 0.0
        for v in range(3):
            io[u, v] = 0.0
    for i in range(5, -1, -1):
        m = masses[i]
        c0, c1, c2 = cw[i, 0], cw[i, 1], cw[i, 2]
        cc = c0 * c0 + c1 * c1 + c2 * c2
        mass += m
        h[0] += m * c0
        h[1] += m * c1
        h[2] += m * c2
        c = (c0, c1, c2)
        for u in range(3):
            for v in range(3):
                io[u, v] += iw[i, u, v] - m * c[u] * c[v]
            io[u, u] += m * cc
        w0, w1, w2 = sa[i, 0], sa[i, 1], sa[i, 2]
        v0, v1, v2 = sl[i, 0], sl[i, 1], sl[i, 2]
        x0, x1, x2 = _cross(h[0], h[1], h[2], v0, v1, v2)
        fa0 = io[0, 0] * w0 + io[0, 1] * w1 + io[0, 2] * w2 + x0
        fa1 = io[1, 0] * w0 + io[1, 1] * w1 + io[1, 2] * w2 + x1
        fa2 = io[2, 0] * w0 + io[2, 1] * w1 + io[2, 2] * w2 + x2
        y0, y1, y2 = _cross(h[0], h[1], h[2], w0, w1, w2)
        fl0 = mass * v0 - y0
        fl1 = mass * v1 - y1
        fl2 = mass * v2 - y2
        for j in range(i + 1):
            val = (
                sa[j, 0] * fa0 + sa[j, 1] * fa1 + sa[j, 2] * fa2
                + sl[j, 0] * fl0 + sl[j, 1] * fl1 + sl[j, 2] * fl2
            )
            out[i, j] = val
            out[j, i] = val


@njit(cache=True)
def rnea_batch(axes, origins, prismatic, masses, coms, inertias, base_height, gravity, q, dq, ddq):
    n = q.shape[0]
    tau = np.empty((n, 6))
    pos = np.empty((6, 3))
    rot = np.empty((6, 3, 3))
    zax = np.empty((6, 3))
    cw = np.empty((6, 3))
    iw = np.empty((6, 3, 3))
    work = np.empty((17, 3))
    for k in range(n):
        _frames_one(axes, origins, prismatic, base_height, q[k], pos, rot, zax)
        _body_terms(coms, inertias, pos, rot, cw, iw)
        _rnea_one(prismatic, masses, base_height, gravity, pos, zax, cw, iw, dq[k], ddq[k], tau[k], work)
    return tau


@njit(cache=True)
def crba_batch(axes, origins, prismatic, masses, coms, inertias, base_height, q):
    n = q.shape[0]
    out = np.empty((n, 6, 6))
    pos = np.empty((6, 3))
    rot = np.empty((6, 3, 3))
    zax = np.empty((6, 3))
    cw = np.empty((6, 3))
    iw = np.empty((6, 3, 3))
    work = np.empty((17, 3))
    for k in range(n):
        _frames_one(axes, origins, prismatic, base_height, q[k], pos, rot, zax)
        _body_terms(coms, inertias, pos, rot, cw, iw)
        _crba_one(prismatic, masses, pos, zax, cw, iw, out[k], work)
    return out


@njit(cache=True)
def dynamics_terms_batch(axes, origins, prismatic, masses, coms, inertias, base_height, gravity, q, dq):
    """Mass matrix, bias forces and gravity forces sharing one kinematics pass."""
    n = q.shape[0]
    mm = np.empty((n, 6, 6))
    bias = np.empty((n, 6))
    grav = np.empty((n, 6))
    pos = np.empty((6, 3))
    rot = np.empty((6, 3, 3))
    zax = np.empty((6, 3))
    cw = np.empty((6, 3))
    iw = np.empty((6, 3, 3))
    zero = np.zeros(6)
    work = np.empty((17, 3))
    for k in range(n):
        _frames_one(axes, origins, prismatic, base_height, q[k], pos, rot, zax)
        _body_terms(coms, inertias, pos, rot, cw, iw)
        _crba_one(prismatic, masses, pos, zax, cw, iw, mm[k], work)
        _rnea_one(prismatic, masses, base_height, gravity, pos, zax, cw, iw, dq[k], zero, bias[k], work)
        _rnea_one(prismatic, masses, base_height, gravity, pos, zax, cw, iw, zero, zero, grav[k], work)
    return mm, bias, grav


@njit(cache=True)
def cholesky_solve_batch(m, rhs):
    """Solve ``m x = rhs`` for a batch of symmetric positive-definite matrices.

    Returns ``(x, ok)``; ``ok[k]`` is False when matrix ``k`` is not positive definite.
    """
    n, d = rhs.shape
    x = np.empty((n, d))
    ok = np.ones(n, dtype=np.bool_)
    lmat = np.empty((d, d))
    y = np.empty(d)
    for k in range(n):
        a = m[k]
        good = True
        for i in range(d):
            for j in range(i + 1):
                s = a[i, j]
                for p in range(j):
                    s -= lmat[i, p] * lmat[j, p]
                if i == j:
                    if s <= 0.0:
                        good = False
                        s = 1.0
                    lmat[i, i] = np.sqrt(s)
                else:
                    lmat[i, j] = s / lmat[j, j]
        ok[k] = good
        for i in range(d):
            s = rhs[k, i]
            for p in range(i):
                s -= lmat[i, p] * y[p]
            y[i] = s / lmat[i, i]
        for i in range(d - 1, -1, -1):
            s = y[i]
            for p in range(i + 1, d):
                s -= lmat[p, i] * x[k, p]
            x[k, i] = s / lmat[i, i]
    return x, ok


# --- collision --------------------------------------------------------------


@njit(cache=True, inline="always")
def _cyl_point_dist(x, y, z, radius, height):
    rho = np.sqrt(x * x + y * y)
    dr = max(rho - radius, 0.0)
    dz = max(max(z - height, -z), 0.0)
    return np.sqrt(dr * dr + dz * dz)


@njit(cache=True)
def segment_cylinder_distance_batch(a, b, radius, height, iters):
    """Golden-section minimum of the (convex) point-cylinder distance along segments."""
    n = a.shape[0]
    out = np.empty(n)
    g = (np.sqrt(5.0) - 1.0) / 2.0
    for k in range(n):
        a0, a1, a2 = a[k, 0], a[k, 1], a[k, 2]
        d0, d1, d2 = b[k, 0] - a0, b[k, 1] - a1, b[k, 2] - a2
        lo, hi = 0.0, 1.0
        x1 = hi - g * (hi - lo)
        x2 = lo + g * (hi - lo)
        f1 = _cyl_point_dist(a0 + d0 * x1, a1 + d1 * x1, a2 + d2 * x1, radius, height)
        f2 = _cyl_point_dist(a0 + d0 * x2, a1 + d1 * x2, a2 + d2 * x2, radius, height)
        for _ in range(iters):
            if f1 <= f2:
                hi = x2
                x2, f2 = x1, f1
                x1 = hi - g * (hi - lo)
                f1 = _cyl_point_dist(a0 + d0 * x1, a1 + d1 * x1, a2 + d2 * x1, radius, height)
            else:
                lo = x1
                x1, f1 = x2, f2
                x2 = lo + g * (hi - lo)
                f2 = _cyl_point_dist(a0 + d0 * x2, a1 + d1 * x2, a2 + d2 * x2, radius, height)
        best = min(f1, f2)
        best = min(best, _cyl_point_dist(a0, a1, a2, radius, height))
        best = min(best, _cyl_point_dist(a0 + d0, a1 + d1, a2 + d2, radius, height))
        out[k] = best
    return out


@njit(cache=True)
def pendulum_batch(theta0, dtheta0, t, w2, ups, eta, max_dt):
    """Damped pendulum angles at times ``t`` for each (ups, eta) candidate."""
    n = ups.shape[0]
    out = np.empty((t.shape[0], n))
    for c in range(n):
        th = theta0
        v = dtheta0
        out[0, c] = th
        for k in range(1, t.shape[0]):
            span = t[k] - t[k - 1]
            n_sub = max(1, int(np.ceil(span / max_dt - 1e-9)))
            h = span / n_sub
            for _ in range(n_sub):
                v -= w2 * np.sin(th) * h
                th += v * h
                av = abs(v)
                dv = min((ups[c] * av + eta[c]) * h, av)
                if v > 0:
                    v -= dv
                elif v < 0:
                    v += dv
            out[k, c] = th
    return out
