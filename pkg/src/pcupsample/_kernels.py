"""Compiled inner loops (numba). Inputs are contiguous float64 / int64 arrays."""
import math

import numpy as np
from numba import njit

# relative squared-area threshold below which a triangle is treated as a segment
_DEGENERATE = 1e-24


@njit(cache=True)
def _seg(px, py, pz, ax, ay, az, bx, by, bz):
    ex, ey, ez = bx - ax, by - ay, bz - az
    den = ex * ex + ey * ey + ez * ez
    t = 0.0
    if den > 0.0:
        t = ((px - ax) * ex + (py - ay) * ey + (pz - az) * ez) / den
        if t < 0.0:
            t = 0.0
        elif t > 1.0:
            t = 1.0
    return ax + t * ex, ay + t * ey, az + t * ez


@njit(cache=True)
def closest_on_triangle(px, py, pz, ax, ay, az, bx, by, bz, cx, cy, cz):
    abx, aby, abz = bx - ax, by - ay, bz - az
    acx, acy, acz = cx - ax, cy - ay, cz - az
    bcx, bcy, bcz = cx - bx, cy - by, cz - bz
    nx = aby * acz - abz * acy
    ny = abz * acx - abx * acz
    nz = abx * acy - aby * acx
    area2 = nx * nx + ny * ny + nz * nz
    s2 = max(abx * abx + aby * aby + abz * abz, acx * acx + acy * acy + acz * acz, bcx * bcx + bcy * bcy + bcz * bcz)
    if area2 <= _DEGENERATE * s2 * s2:
        best = (ax, ay, az)
        bd = (px - ax) ** 2 + (py - ay) ** 2 + (pz - az) ** 2
        for q in (_seg(px, py, pz, ax, ay, az, bx, by, bz), _seg(px, py, pz, bx, by, bz, cx, cy, cz), _seg(px, py, pz, ax, ay, az, cx, cy, cz)):
            d = (px - q[0]) ** 2 + (py - q[1]) ** 2 + (pz - q[2]) ** 2
            if d < bd:
                bd = d
                best = q
        return best

    apx, apy, apz = px - ax, py - ay, pz - az
    d1 = abx * apx + aby * apy + abz * apz
    d2 = acx * apx + acy * apy + acz * apz
    if d1 <= 0.0 and d2 <= 0.0:
        return ax, ay, az
    bpx, bpy, bpz = px - bx, py - by, pz - bz
    d3 = abx * bpx + aby * bpy + abz * bpz
    d4 = acx * bpx + acy * bpy + acz * bpz
    if d3 >= 0.0 and d4 <= d3:
        return bx, by, bz
    vc = d1 * d4 - d3 * d2
    if vc <= 0.0 and d1 >= 0.0 and d3 <= 0.0:
        v = d1 / (d1 - d3)
        return ax + v * abx, ay + v * aby, az + v * abz
    cpx, cpy, cpz = px - cx, py - cy, pz - cz
    d5 = abx * cpx + aby * cpy + abz * cpz
    d6 = acx * cpx + acy * cpy + acz * cpz
    if d6 >= 0.0 and d5 <= d6:
        return cx, cy, cz
    vb = d5 * d2 - d1 * d6
    if vb <= 0.0 and d2 >= 0.0 and d6 <= 0.0:
        w = d2 / (d2 - d6)
        return ax + w * acx, ay + w * acy, az + w * acz
    va = d3 * d6 - d5 * d4
    if va <= 0.0 and (d4 - d3) >= 0.0 and (d5 - d6) >= 0.0:
        w = (d4 - d3) / ((d4 - d3) + (d5 - d6))
        return bx + w * bcx, by + w * bcy, bz + w * bcz
    den = 1.0 / (va + vb + vc)
    v = vb * den
    w = vc * den
    return ax + abx * v + acx * w, ay + aby * v + acy * w, az + abz * v + acz * w


@njit(cache=True)
def closest_on_triangles(p, a, b, c, out):
    for i in range(p.shape[0]):
        q = closest_on_triangle(
            p[i, 0], p[i, 1], p[i, 2],
            a[i, 0], a[i, 1], a[i, 2],
            b[i, 0], b[i, 1], b[i, 2],
            c[i, 0], c[i, 1], c[i, 2],
        )
        out[i, 0] = q[0]
        out[i, 1] = q[1]
        out[i, 2] = q[2]


@njit(cache=True)
def _dist(px, py, pz, q):
    return math.sqrt((px - q[0]) ** 2 + (py - q[1]) ** 2 + (pz - q[2]) ** 2)


@njit(cache=True)
def fan_min(centres, points, nb, out):
    """Distance from each centre to its triangle fan (see seeding.fan_distances)."""
    m = nb.shape[1]
    for i in range(centres.shape[0]):
        px, py, pz = centres[i, 0], centres[i, 1], centres[i, 2]
        i0 = nb[i, 0]
        ax, ay, az = points[i0, 0], points[i0, 1], points[i0, 2]
        # base edge: first neighbour not coincident with p1
        j = 1
        while j < m:
            k = nb[i, j]
            if points[k, 0] != ax or points[k, 1] != ay or points[k, 2] != az:
                break
            j += 1
        if j == m:
            out[i] = math.sqrt((px - ax) ** 2 + (py - ay) ** 2 + (pz - az) ** 2)
            continue
        k = nb[i, j]
        bx, by, bz = points[k, 0], points[k, 1], points[k, 2]
        if j == m - 1:
            out[i] = _dist(px, py, pz, _seg(px, py, pz, ax, ay, az, bx, by, bz))
            continue
        best = np.inf
        for t in range(j + 1, m):
            k = nb[i, t]
            q = closest_on_triangle(px, py, pz, ax, ay, az, bx, by, bz, points[k, 0], points[k, 1], points[k, 2])
            d = _dist(px, py, pz, q)
            if d < best:
                best = d
        out[i] = best


@njit(cache=True)
def farthest_point_sampling(points, n_samples, start):
    """Greedy max-min selection; ties resolved by lowest index."""
    n = points.shape[0]
    sel = np.empty(n_samples, dtype=np.int64)
    mind = np.full(n, np.inf)
    cur = start
    for s in range(n_samples):
        sel[s] = cur
        cx, cy, cz = points[cur, 0], points[cur, 1], points[cur, 2]
        best = -1.0
        nxt = 0
        for i in range(n):
            d = (points[i, 0] - cx) ** 2 + (points[i, 1] - cy) ** 2 + (points[i, 2] - cz) ** 2
            if d < mind[i]:
                mind[i] = d
            if mind[i] > best:
                best = mind[i]
                nxt = i
        cur = nxt
    return sel
