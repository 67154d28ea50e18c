"""Compiled inner loops for ray walking, map writes and planar segment-versus-cell tests."""

from __future__ import annotations

import math

import numpy as np
from numba import njit

_FREE = 1
_OCCUPIED = 2


@njit(cache=True)
def _point_box(px, py, x0, y0, x1, y1):
    dx = max(x0 - px, 0.0, px - x1)
    dy = max(y0 - py, 0.0, py - y1)
    return math.sqrt(dx * dx + dy * dy)


@njit(cache=True)
def _point_segment(px, py, ax, ay, dx, dy, L2):
    t = 0.0
    if L2 > 0.0:
        t = ((px - ax) * dx + (py - ay) * dy) / L2
        t = min(max(t, 0.0), 1.0)
    qx = ax + dx * t - px
    qy = ay + dy * t - py
    return math.sqrt(qx * qx + qy * qy)


@njit(cache=True)
def segment_box_distance(ax, ay, bx, by, x0, y0, x1, y1):
    """Planar distance between segment a->b and box [x0, x1] x [y0, y1]."""
    dx = bx - ax
    dy = by - ay
    tmin, tmax = 0.0, 1.0
    hit = True
    if abs(dx) < 1e-15:
        if ax < x0 or ax > x1:
            hit = False
    else:
        t1 = (x0 - ax) / dx
        t2 = (x1 - ax) / dx
        tmin = max(tmin, min(t1, t2))
        tmax = min(tmax, max(t1, t2))
    if abs(dy) < 1e-15:
        if ay < y0 or ay > y1:
            hit = False
    else:
        t1 = (y0 - ay) / dy
        t2 = (y1 - ay) / dy
        tmin = max(tmin, min(t1, t2))
        tmax = min(tmax, max(t1, t2))
    if hit and tmin <= tmax:
        return 0.0
    L2 = dx * dx + dy * dy
    best = min(_point_box(ax, ay, x0, y0, x1, y1), _point_box(bx, by, x0, y0, x1, y1))
    best = min(best, _point_segment(x0, y0, ax, ay, dx, dy, L2))
    best = min(best, _point_segment(x1, y0, ax, ay, dx, dy, L2))
    best = min(best, _point_segment(x0, y1, ax, ay, dx, dy, L2))
    best = min(best, _point_segment(x1, y1, ax, ay, dx, dy, L2))
    return best


@njit(cache=True)
def check_segments(grid, ox, oy, p, clearance, a, b, touched, count, cap, account,
                   rx=np.nan, ry=np.nan, rc=0.0):
    """Test segments a[k] -> b[k] against ``grid``.

    A segment is free when every cell it crosses is Free and no Occupied
    cell lies closer than ``clearance``.  Segments with an endpoint exactly
    at the anchor (rx, ry) only need min(clearance, rc), which lets a
    drone that already sits close to an obstacle move away.  Every known
    cell within ``clearance`` of a segment that is not yet marked in
    ``touched`` adds one to ``count`` and is marked, so ``count`` is the
    number of distinct cells explored.  If the new cells would push
    ``count`` past ``cap`` (cap < 0 means unbounded) nothing is marked and
    the call reports a trip.  Returns (ok, count, tripped).
    """
    m = a.shape[0]
    nx, ny = grid.shape
    ok = np.ones(m, dtype=np.bool_)
    k = int(math.ceil(clearance / p)) if clearance > 0 else 0
    buf = np.empty(64, dtype=np.int64)
    n_new = 0
    visits = 0
    for s in range(m):
        ax, ay, bx, by = a[s, 0], a[s, 1], b[s, 0], b[s, 1]
        c = clearance
        if (ax == rx and ay == ry) or (bx == rx and by == ry):
            c = min(clearance, rc)
        i_lo = int(math.floor((min(ax, bx) - ox) / p)) - k
        i_hi = int(math.floor((max(ax, bx) - ox) / p)) + k
        j_lo = int(math.floor((min(ay, by) - oy) / p)) - k
        j_hi = int(math.floor((max(ay, by) - oy) / p)) + k
        for i in range(i_lo, i_hi + 1):
            x0 = ox + i * p
            for j in range(j_lo, j_hi + 1):
                y0 = oy + j * p
                inside = 0 <= i < nx and 0 <= j < ny
                st = grid[i, j] if inside else 0
                if st == _FREE and not account:
                    continue
                d = segment_box_distance(ax, ay, bx, by, x0, y0, x0 + p, y0 + p)
                if (d <= 1e-12 and st != _FREE) or (st == _OCCUPIED and d < c):
                    ok[s] = False
                if account and st != 0 and d <= clearance:
                    if touched[i, j]:
                        continue
                    visits += 1
                    touched[i, j] = True
                    if n_new == buf.shape[0]:
                        nb = np.empty(2 * n_new, dtype=np.int64)
                        nb[:n_new] = buf
                        buf = nb
                    buf[n_new] = i * ny + j
                    n_new += 1
    if account and cap >= 0 and count + visits > cap:
        for q in range(n_new):
            touched[buf[q] // ny, buf[q] % ny] = False
        ok[:] = False
        return ok, count, True
    return ok, count + visits, False


@njit(cache=True)
def _shift_subtree(parent, cost, n, root, delta):
    stack = np.empty(n, dtype=np.int64)
    top = 0
    stack[0] = root
    top = 1
    while top > 0:
        top -= 1
        q = stack[top]
        cost[q] += delta
        for c in range(n):
            if parent[c] == q:
                stack[top] = c
                top += 1


@njit(cache=True)
def rrt_star(grid, ox, oy, p, clearance, sx, sy, gx, gy, step, tol, gamma_span,
             u_bias, goal_bias, pick, jitter, free_i, free_j, touched, count, cap, rc):
    """RRT* over Free cells with pre-drawn random numbers.

    Returns (nodes, parent, cost, n, goal_parent, goal_cost, count, tripped).
    """
    iters = u_bias.shape[0]
    nodes = np.zeros((iters + 1, 2))
    parent = np.full(iters + 1, -1, dtype=np.int64)
    cost = np.zeros(iters + 1)
    nodes[0, 0], nodes[0, 1] = sx, sy
    n = 1
    goal_parent, goal_cost = -1, np.inf
    n_free = free_i.shape[0]
    a = np.empty((iters + 2, 2))
    b = np.empty((iters + 2, 2))
    dn = np.empty(iters + 1)
    tripped = False
    for it in range(iters):
        if u_bias[it] < goal_bias or n_free == 0:
            x, y = gx, gy
        else:
            k = pick[it] % n_free
            x = ox + (free_i[k] + jitter[it, 0]) * p
            y = oy + (free_j[k] + jitter[it, 1]) * p
        best_d, near = np.inf, -1
        for q in range(n):
            d = math.hypot(nodes[q, 0] - x, nodes[q, 1] - y)
            if d < best_d:
                best_d, near = d, q
        if best_d < 1e-9:
            continue
        f = min(1.0, step / best_d)
        nx_ = nodes[near, 0] + (x - nodes[near, 0]) * f
        ny_ = nodes[near, 1] + (y - nodes[near, 1]) * f

        # k-nearest neighbourhood inside the shrinking rewire radius
        radius = min(gamma_span * (math.log(n + 1) / (n + 1)) ** (1.0 / 3.0), step)
        for q in range(n):
            dn[q] = math.hypot(nodes[q, 0] - nx_, nodes[q, 1] - ny_)
        order = np.argsort(dn[:n], kind="mergesort")
        k_max = int(2.0 * math.e * math.log(n + 1)) + 1
        m = 0
        cand = np.empty(min(n, k_max), dtype=np.int64)
        for t in range(min(n, k_max)):
            q = order[t]
            if t > 0 and dn[q] > radius:
                break
            cand[m] = q
            a[m, 0], a[m, 1] = nx_, ny_
            b[m, 0], b[m, 1] = nodes[q, 0], nodes[q, 1]
            m += 1
        r = m
        dg = math.hypot(nx_ - gx, ny_ - gy)
        try_goal = dg <= tol
        if try_goal:
            a[m, 0], a[m, 1] = nx_, ny_
            b[m, 0], b[m, 1] = gx, gy
            m += 1
        ok, count, trip = check_segments(grid, ox, oy, p, clearance, a[:m], b[:m], touched, count, cap, True,
                                         sx, sy, rc)
        if trip:
            tripped = True
            break
        best, best_c = -1, np.inf
        for t in range(r):
            q = cand[t]
            if ok[t] and cost[q] + dn[q] < best_c:
                best_c, best = cost[q] + dn[q], q
        if best < 0:
            continue
        new = n
        nodes[new, 0], nodes[new, 1] = nx_, ny_
        parent[new] = best
        cost[new] = best_c
        n += 1
        for t in range(r):
            q = cand[t]
            if ok[t] and q != best and cost[new] + dn[q] < cost[q] - 1e-12:
                delta = cost[new] + dn[q] - cost[q]
                parent[q] = new
                _shift_subtree(parent, cost, n, q, delta)
        if try_goal and ok[m - 1] and cost[new] + dg < goal_cost:
            goal_parent, goal_cost = new, cost[new] + dg
    return nodes, parent, cost, n, goal_parent, goal_cost, count, tripped



@njit(cache=True)
def cells_seen_free(ci, cj, p, ox, oy, sx, sy, theta0, A, R, ray_angle):
    """Per cell, whether the scan saw all of it free.

    The cell is replaced by its circumscribed circle: its far edge must be
    nearer than every ray across the circle's sector.

    ``A`` holds ray bearings minus ``theta0`` (the first ray), sorted in
    [0, 2*pi), and ``R`` the matching ranges.  Both rays bracketing the
    sector count.  Neighbouring rays more than 1.5 spacings apart mark a hole
    in the field of view, and a sector over a hole is not free.
    """
    m = ci.shape[0]
    n = A.shape[0]
    out = np.zeros(m, dtype=np.bool_)
    if n == 0:
        return out
    two_pi = 2.0 * math.pi
    gap_max = 1.5 * ray_angle
    for c in range(m):
        x0 = ox + ci[c] * p - sx
        y0 = oy + cj[c] * p - sy
        # bound the cell by its circumscribed circle: one bearing and one half-width
        cx, cy = x0 + 0.5 * p, y0 + 0.5 * p
        d = math.hypot(cx, cy)
        rad = p * math.sqrt(0.5)
        r_max = d + rad
        if d <= rad:
            a, w = 0.0, two_pi          # the sensor may sit in the cell: every ray matters
        else:
            half = math.asin(rad / d)
            a = (math.atan2(cy, cx) - half - theta0) % two_pi
            w = 2.0 * half
        # last ray at or before the sector start (wrapping to the final ray)
        k = np.searchsorted(A, a, side="right") - 1
        base = 0.0
        if k < 0:
            k = n - 1
            base = -two_pi
        ok = True
        prev = A[k] + base
        for _ in range(n + 1):
            if R[k] <= r_max:
                ok = False
                break
            if prev >= a + w:
                break
            k += 1
            if k == n:
                k = 0
                base += two_pi
            cur = A[k] + base
            if cur - prev > gap_max:
                ok = False
                break
            prev = cur
        out[c] = ok
    return out



@njit(cache=True)
def walk_rays(sx, sy, ends, is_hit, step, gx, gy, p, nx, ny, wi, wj, wnx, wny, max_cells):
    """Step rays from (sx, sy) to ``ends`` in order and flag the cells they touch.

    Points sit at k * step along each ray (k * step < length) followed by the
    endpoint.  Cell indices are relative to the grid origin (gx, gy) at side
    ``p``; the window (wi, wj, wnx, wny) must cover every point.  The walk
    stops before the first point whose newly touched cell would exceed
    ``max_cells``.  Returns (flags, cells, rays, steps) where the window
    flags carry bit 1 for touched, 2 for passed through and 4 for a hit.
    """
    flags = np.zeros((wnx, wny), dtype=np.uint8)
    cells = 0
    rays = 0
    steps = 0
    for r in range(ends.shape[0]):
        ex, ey = ends[r, 0], ends[r, 1]
        dx, dy = ex - sx, ey - sy
        length = math.hypot(dx, dy)
        n = 1
        ux, uy = 0.0, 0.0
        if length > 0:
            n = int(math.floor(length / step)) + 1
            ux, uy = dx / length, dy / length
        for k in range(n + 1):
            if k == n:
                px, py = ex, ey
            else:
                px, py = sx + ux * (k * step), sy + uy * (k * step)
            i = int(math.floor((px - gx) / p))
            j = int(math.floor((py - gy) / p))
            if 0 <= i < nx and 0 <= j < ny:
                a, b = i - wi, j - wj
                f = flags[a, b]
                if f == 0:
                    if cells == max_cells:
                        return flags, cells, rays, steps
                    cells += 1
                    f = 1
                if k == n and is_hit[r]:
                    f |= 4
                else:
                    f |= 2
                flags[a, b] = f
                if k < n:
                    steps += 1
        rays += 1
    return flags, cells, rays, steps


@njit(cache=True)
def fill_level(state, min_state, occ_level, leaf, ii, jj, f, value, occ):
    """Write ``value`` into every f x f block of level arrays below cells (ii, jj).

    Returns how many written cells were known before the write.
    """
    before = 0
    for n in range(ii.size):
        i0 = ii[n] * f
        j0 = jj[n] * f
        for a in range(i0, i0 + f):
            for b in range(j0, j0 + f):
                if state[a, b] != 0:
                    before += 1
                state[a, b] = value
                min_state[a, b] = value
                occ_level[a, b] = occ
                leaf[a, b] = False
    return before


@njit(cache=True)
def window_known(state, min_state, i0, i1, j0, j1, px, py, ox, oy, p):
    """Known cells of a level window under the strict collapse.

    Returns (i, j, collapsed state, distance from (px, py) to the cell box).
    """
    n = 0
    for i in range(i0, i1):
        for j in range(j0, j1):
            if state[i, j] == _OCCUPIED or min_state[i, j] >= _FREE:
                n += 1
    gi = np.empty(n, dtype=np.int64)
    gj = np.empty(n, dtype=np.int64)
    val = np.empty(n, dtype=np.uint8)
    dist = np.empty(n)
    n = 0
    for i in range(i0, i1):
        for j in range(j0, j1):
            if state[i, j] == _OCCUPIED:
                val[n] = _OCCUPIED
            elif min_state[i, j] >= _FREE:
                val[n] = _FREE
            else:
                continue
            gi[n] = i
            gj[n] = j
            x0 = ox + i * p
            y0 = oy + j * p
            dist[n] = _point_box(px, py, x0, y0, x0 + p, y0 + p)
            n += 1
    return gi, gj, val, dist
