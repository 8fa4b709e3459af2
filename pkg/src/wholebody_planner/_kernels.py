"""Compiled inner loops for grid collision queries.

All coordinates here are in grid units (world minus origin, divided by the
resolution). ``occ`` is the occupancy array padded by one occupied cell on
every side, indexed ``occ[j + 1, i + 1]``.
"""

import math

import numpy as np
from numba import njit


@njit(cache=True, inline="always")
def _occ(occ, i, j):
    h, w = occ.shape
    ii = min(max(i + 1, 0), w - 1)
    jj = min(max(j + 1, 0), h - 1)
    return occ[jj, ii]


@njit(cache=True)
def segment_hit(occ, x0, y0, x1, y1):
    """Supercover traversal; corner crossings test both side neighbours."""
    i = int(math.floor(x0))
    j = int(math.floor(y0))
    if _occ(occ, i, j):
        return True
    dx = x1 - x0
    dy = y1 - y0
    if dx > 0:
        sx, tdx, tmx = 1, 1.0 / dx, (i + 1 - x0) / dx
    elif dx < 0:
        sx, tdx, tmx = -1, -1.0 / dx, (x0 - i) / -dx
    else:
        sx, tdx, tmx = 0, np.inf, np.inf
    if dy > 0:
        sy, tdy, tmy = 1, 1.0 / dy, (j + 1 - y0) / dy
    elif dy < 0:
        sy, tdy, tmy = -1, -1.0 / dy, (y0 - j) / -dy
    else:
        sy, tdy, tmy = 0, np.inf, np.inf
    while True:
        if tmx < tmy:
            if tmx > 1.0:
                return False
            i += sx
            tmx += tdx
        elif tmy < tmx:
            if tmy > 1.0:
                return False
            j += sy
            tmy += tdy
        else:
            if tmx > 1.0:
                return False
            if _occ(occ, i + sx, j) or _occ(occ, i, j + sy):
                return True
            i += sx
            j += sy
            tmx += tdx
            tmy += tdy
        if _occ(occ, i, j):
            return True


@njit(cache=True)
def segments_hit(occ, p0, p1):
    n = p0.shape[0]
    out = np.zeros(n, dtype=np.bool_)
    for k in range(n):
        out[k] = segment_hit(occ, p0[k, 0], p0[k, 1], p1[k, 0], p1[k, 1])
    return out


@njit(cache=True)
def interior_hit(occ, poly):
    """Any occupied cell whose center lies inside the CCW convex polygon."""
    nv = poly.shape[0]
    xmin = poly[:, 0].min()
    xmax = poly[:, 0].max()
    ymin = poly[:, 1].min()
    ymax = poly[:, 1].max()
    i0 = int(math.floor(xmin - 0.5)) + 1
    i1 = int(math.floor(xmax - 0.5))
    j0 = int(math.floor(ymin - 0.5)) + 1
    j1 = int(math.floor(ymax - 0.5))
    for j in range(j0, j1 + 1):
        cy = j + 0.5
        for i in range(i0, i1 + 1):
            if not _occ(occ, i, j):
                continue
            cx = i + 0.5
            inside = True
            for k in range(nv):
                ax = poly[k, 0]
                ay = poly[k, 1]
                bx = poly[(k + 1) % nv, 0]
                by = poly[(k + 1) % nv, 1]
                if (bx - ax) * (cy - ay) - (by - ay) * (cx - ax) < 0.0:
                    inside = False
                    break
            if inside:
                return True
    return False


@njit(cache=True)
def polygon_hit(occ, poly):
    nv = poly.shape[0]
    for k in range(nv):
        kk = (k + 1) % nv
        if segment_hit(occ, poly[k, 0], poly[k, 1], poly[kk, 0], poly[kk, 1]):
            return True
    return interior_hit(occ, poly)


@njit(cache=True)
def polygons_hit(occ, clearance, polys, use_clearance):
    """Batch footprint test; ``clearance`` is in grid units, unpadded."""
    n = polys.shape[0]
    out = np.zeros(n, dtype=np.bool_)
    for k in range(n):
        out[k] = quad_hit(occ, clearance, polys[k], use_clearance)
    return out


@njit(cache=True)
def quad_hit(occ, clearance, poly, use_clearance):
    """Single-polygon body of :func:`polygons_hit`."""
    nv = poly.shape[0]
    if use_clearance:
        h, w = clearance.shape
        cx = 0.0
        cy = 0.0
        for m in range(nv):
            cx += poly[m, 0]
            cy += poly[m, 1]
        cx /= nv
        cy /= nv
        rad = 0.0
        for m in range(nv):
            rad = max(rad, math.hypot(poly[m, 0] - cx, poly[m, 1] - cy))
        i = int(math.floor(cx))
        j = int(math.floor(cy))
        if 0 <= i < w and 0 <= j < h and clearance[j, i] - math.sqrt(2.0) > rad:
            return False
    return polygon_hit(occ, poly)


# Two-point connection of a planar double integrator with free final time.
# For a fixed horizon T the minimum effort is c1/T^3 + c2/T^2 + c3/T, so the
# cost with a time weight is J(T) = c1/T^3 + c2/T^2 + c3/T + rho*T and its
# stationary points are the positive roots of
#     P(T) = rho*T^4 - c3*T^2 - 2*c2*T - 3*c1.


@njit(cache=True, inline="always")
def _quartic(T, rho, c1, c2, c3):
    T2 = T * T
    return rho * T2 * T2 - c3 * T2 - 2.0 * c2 * T - 3.0 * c1


@njit(cache=True)
def _cubic_real_roots(p, q, out):
    # Real roots of t^3 + p t + q = 0 written into ``out``; returns count.
    if p == 0.0:
        out[0] = -math.copysign(abs(q) ** (1.0 / 3.0), q)
        return 1
    disc = 4.0 * p * p * p + 27.0 * q * q
    if disc < 0.0:
        m = 2.0 * math.sqrt(-p / 3.0)
        arg = 3.0 * q / (p * m)
        arg = min(1.0, max(-1.0, arg))
        theta = math.acos(arg) / 3.0
        for k in range(3):
            out[k] = m * math.cos(theta - 2.0 * math.pi * k / 3.0)
        return 3
    s = math.sqrt(q * q / 4.0 + p * p * p / 27.0)
    a = -q / 2.0 + s
    b = -q / 2.0 - s
    out[0] = math.copysign(abs(a) ** (1.0 / 3.0), a) + math.copysign(abs(b) ** (1.0 / 3.0), b)
    return 1


@njit(cache=True)
def connection_cost(dpx, dpy, v0x, v0y, v1x, v1y, rho):
    """``(J*, T*)``: minimum over ``T > 0`` of effort plus ``rho * T``.

    Coincident states are already connected (``T = 0``, cost 0).
    """
    c1 = 12.0 * (dpx * dpx + dpy * dpy)
    c2 = -12.0 * ((v0x + v1x) * dpx + (v0y + v1y) * dpy)
    c3 = 4.0 * (v0x * v0x + v0y * v0y + v0x * v1x + v0y * v1y + v1x * v1x + v1y * v1y)
    dv = (v1x - v0x) * (v1x - v0x) + (v1y - v0y) * (v1y - v0y)
    if c1 < 1e-24 and dv < 1e-24:
        return 0.0, 0.0
    if rho <= 0.0:
        return 0.0, np.inf
    crit = np.empty(3)
    n_crit = _cubic_real_roots(-c3 / (2.0 * rho), -c2 / (2.0 * rho), crit)
    bound = 1.0 + max(c3, max(2.0 * abs(c2), 3.0 * c1)) / rho
    pts = np.empty(5)
    pts[0] = 0.0
    n_pts = 1
    for k in range(n_crit):
        if 0.0 < crit[k] < bound:
            pts[n_pts] = crit[k]
            n_pts += 1
    pts[n_pts] = bound
    n_pts += 1
    pts[:n_pts].sort()
    best_J = np.inf
    best_T = 0.0
    for k in range(n_pts - 1):
        lo = pts[k]
        hi = pts[k + 1]
        f_lo = _quartic(lo, rho, c1, c2, c3)
        f_hi = _quartic(hi, rho, c1, c2, c3)
        if f_lo > 0.0 or f_hi < 0.0 or hi <= lo:
            continue
        # P rises from <= 0 to >= 0: a minimum of J (J' = P / T^4)
        for _ in range(80):
            mid = 0.5 * (lo + hi)
            if mid <= lo or mid >= hi:
                break
            if _quartic(mid, rho, c1, c2, c3) < 0.0:
                lo = mid
            else:
                hi = mid
        T = 0.5 * (lo + hi)
        if T <= 0.0:
            continue
        J = c1 / (T * T * T) + c2 / (T * T) + c3 / T + rho * T
        if J < best_J:
            best_J = J
            best_T = T
    return max(best_J, 0.0), best_T


@njit(cache=True)
def connection_costs(dp, v0, v1, rho):
    n = dp.shape[0]
    J = np.empty(n)
    T = np.empty(n)
    for k in range(n):
        J[k], T[k] = connection_cost(dp[k, 0], dp[k, 1], v0[k, 0], v0[k, 1], v1[k, 0], v1[k, 1], rho)
    return J, T


@njit(cache=True)
def expand_node(s, u, dur, frac, v_max, occ, clearance, origin, res, body, use_clearance):
    """Propagate every input from ``s``; flag feasible, collision-free children.

    Returns end states ``(n, 5)`` and a boolean mask. Footprints are tested at
    local times ``frac * dur``.
    """
    n = u.shape[0]
    ends = np.empty((n, 5))
    ok = np.zeros(n, dtype=np.bool_)
    nb = body.shape[0]
    quad = np.empty((nb, 2))
    tol = v_max + 1e-9
    for k in range(n):
        d = dur[k]
        ax = u[k, 0]
        ay = u[k, 1]
        wz = u[k, 2]
        vx = s[3] + ax * d
        vy = s[4] + ay * d
        ends[k, 0] = s[0] + s[3] * d + 0.5 * ax * d * d
        ends[k, 1] = s[1] + s[4] * d + 0.5 * ay * d * d
        ends[k, 2] = s[2] + wz * d
        ends[k, 3] = vx
        ends[k, 4] = vy
        if abs(vx) > tol or abs(vy) > tol:
            continue
        free = True
        for m in range(frac.shape[0]):
            t = frac[m] * d
            x = s[0] + s[3] * t + 0.5 * ax * t * t
            y = s[1] + s[4] * t + 0.5 * ay * t * t
            psi = s[2] + wz * t
            c = math.cos(psi)
            sn = math.sin(psi)
            for v in range(nb):
                quad[v, 0] = (c * body[v, 0] - sn * body[v, 1] + x - origin[0]) / res
                quad[v, 1] = (sn * body[v, 0] + c * body[v, 1] + y - origin[1]) / res
            if quad_hit(occ, clearance, quad, use_clearance):
                free = False
                break
        ok[k] = free
    return ends, ok


@njit(cache=True)
def heuristic_values(states, goal, rho, dist, origin, res, use_dist):
    """Unweighted cost-to-go for ``(n, >=5)`` states.

    With ``use_dist`` the offset to the goal is stretched to the geodesic
    distance read from ``dist`` (meters per cell, ``inf`` when unreachable).
    """
    n = states.shape[0]
    h, w = dist.shape
    out = np.empty(n)
    for k in range(n):
        dpx = goal[0] - states[k, 0]
        dpy = goal[1] - states[k, 1]
        if use_dist:
            i = int(math.floor((states[k, 0] - origin[0]) / res))
            j = int(math.floor((states[k, 1] - origin[1]) / res))
            if i < 0 or j < 0 or i >= w or j >= h or not np.isfinite(dist[j, i]):
                out[k] = np.inf
                continue
            e = math.hypot(dpx, dpy)
            if e > 1e-9 and dist[j, i] > e:
                dpx *= dist[j, i] / e
                dpy *= dist[j, i] / e
        out[k] = connection_cost(dpx, dpy, states[k, 3], states[k, 4], goal[3], goal[4], rho)[0]
    return out


@njit(cache=True)
def edge_costs(u, dur, ends, rho, lambda_t, min_speed):
    """Control effort plus time plus heading/velocity misalignment at the primitive end."""
    n = u.shape[0]
    out = np.empty(n)
    for k in range(n):
        c = (u[k, 0] ** 2 + u[k, 1] ** 2 + u[k, 2] ** 2 + rho) * dur[k]
        vx = ends[k, 3]
        vy = ends[k, 4]
        if math.hypot(vx, vy) >= min_speed:
            d = math.atan2(vy, vx) - ends[k, 2]
            d = math.pi - (math.pi - d) % (2.0 * math.pi)  # wrap to (-pi, pi]
            c += lambda_t * d * d
        out[k] = c
    return out


@njit(cache=True, inline="always")
def _smoothed_l1(x, mu):
    if x <= 0.0:
        return 0.0, 0.0
    if x > mu:
        return x - 0.5 * mu, 1.0
    r = x / mu
    return (mu - 0.5 * x) * r * r * r, r * r * (3.0 - 2.0 * r)


@njit(cache=True)
def corridor_violation(A, b, poly_idx, body, pose, mu):
    """Relaxed violation of body samples against one polygon per pose.

    ``A (P, F, 2)``, ``b (P, F)``, ``poly_idx (N,)``, ``body (S, 2)``,
    ``pose (N, 3)``. Returns ``G (N,)`` and ``dG/d(x, y, psi)`` ``(N, 3)``.
    """
    n = pose.shape[0]
    nf = A.shape[1]
    G = np.zeros(n)
    dG = np.zeros((n, 3))
    for k in range(n):
        p = poly_idx[k]
        c = math.cos(pose[k, 2])
        s = math.sin(pose[k, 2])
        g = 0.0
        gx = 0.0
        gy = 0.0
        gp = 0.0
        for m in range(body.shape[0]):
            bx = body[m, 0]
            by = body[m, 1]
            wx = c * bx - s * by + pose[k, 0]
            wy = s * bx + c * by + pose[k, 1]
            # d(world point)/d(psi)
            rx = -s * bx - c * by
            ry = c * bx - s * by
            for f in range(nf):
                ax = A[p, f, 0]
                ay = A[p, f, 1]
                val, der = _smoothed_l1(ax * wx + ay * wy - b[p, f], mu)
                if der == 0.0 and val == 0.0:
                    continue
                g += val
                gx += der * ax
                gy += der * ay
                gp += der * (ax * rx + ay * ry)
        G[k] = g
        dG[k, 0] = gx
        dG[k, 1] = gy
        dG[k, 2] = gp
    return G, dG
