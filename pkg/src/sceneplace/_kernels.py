"""Compiled inner loops for grid construction."""

import math

import numpy as np
from numba import njit


@njit(cache=True)
def _closest_on_triangle(px, py, pz, tri):
    ax, ay, az = tri[0, 0], tri[0, 1], tri[0, 2]
    abx, aby, abz = tri[1, 0] - ax, tri[1, 1] - ay, tri[1, 2] - az
    acx, acy, acz = tri[2, 0] - ax, tri[2, 1] - ay, tri[2, 2] - az
    apx, apy, apz = px - ax, py - ay, pz - az
    d1 = abx * apx + aby * apy + abz * apz
    d2 = acx * apx + acy * apy + acz * apz
    if d1 <= 0.0 and d2 <= 0.0:
        return 0.0, 0.0, 1
    bpx, bpy, bpz = px - tri[1, 0], py - tri[1, 1], pz - tri[1, 2]
    d3 = abx * bpx + aby * bpy + abz * bpz
    d4 = acx * bpx + acy * bpy + acz * bpz
    if d3 >= 0.0 and d4 <= d3:
        return 1.0, 0.0, 2
    vc = d1 * d4 - d3 * d2
    if vc <= 0.0 and d1 >= 0.0 and d3 <= 0.0:
        return d1 / (d1 - d3), 0.0, 4
    cpx, cpy, cpz = px - tri[2, 0], py - tri[2, 1], pz - tri[2, 2]
    d5 = abx * cpx + aby * cpy + abz * cpz
    d6 = acx * cpx + acy * cpy + acz * cpz
    if d6 >= 0.0 and d5 <= d6:
        return 0.0, 1.0, 3
    vb = d5 * d2 - d1 * d6
    if vb <= 0.0 and d2 >= 0.0 and d6 <= 0.0:
        return 0.0, d2 / (d2 - d6), 6
    va = d3 * d6 - d5 * d4
    if va <= 0.0 and (d4 - d3) >= 0.0 and (d5 - d6) >= 0.0:
        w = (d4 - d3) / ((d4 - d3) + (d5 - d6))
        return 1.0 - w, w, 5
    denom = 1.0 / (va + vb + vc)
    return vb * denom, vc * denom, 0


@njit(cache=True)
def nearest_triangles(points, corners, lo, hi):
    """Exact nearest triangle per point with bounding-box pruning.

    Returns squared distance, triangle index, feature region and closest point.
    """
    n = points.shape[0]
    t = corners.shape[0]
    best_d2 = np.full(n, np.inf)
    best_tri = np.zeros(n, dtype=np.int64)
    best_reg = np.zeros(n, dtype=np.int64)
    best_pt = np.zeros((n, 3))
    warm = 0
    for i in range(n):
        px, py, pz = points[i, 0], points[i, 1], points[i, 2]
        bd = np.inf
        for s in range(t + 1):
            j = warm if s == 0 else s - 1
            if s > 0 and j == warm:
                continue
            gx = max(0.0, lo[j, 0] - px, px - hi[j, 0])
            gy = max(0.0, lo[j, 1] - py, py - hi[j, 1])
            gz = max(0.0, lo[j, 2] - pz, pz - hi[j, 2])
            if gx * gx + gy * gy + gz * gz >= bd:
                continue
            tri = corners[j]
            v, w, reg = _closest_on_triangle(px, py, pz, tri)
            qx = tri[0, 0] + v * (tri[1, 0] - tri[0, 0]) + w * (tri[2, 0] - tri[0, 0])
            qy = tri[0, 1] + v * (tri[1, 1] - tri[0, 1]) + w * (tri[2, 1] - tri[0, 1])
            qz = tri[0, 2] + v * (tri[1, 2] - tri[0, 2]) + w * (tri[2, 2] - tri[0, 2])
            d2 = (px - qx) ** 2 + (py - qy) ** 2 + (pz - qz) ** 2
            if d2 < bd:
                bd = d2
                best_tri[i] = j
                best_reg[i] = reg
                best_pt[i, 0] = qx
                best_pt[i, 1] = qy
                best_pt[i, 2] = qz
        best_d2[i] = bd
        warm = best_tri[i]
    return best_d2, best_tri, best_reg, best_pt


@njit(cache=True)
def winding_numbers(points, corners):
    n = points.shape[0]
    out = np.zeros(n)
    for i in range(n):
        acc = 0.0
        for j in range(corners.shape[0]):
            ax = corners[j, 0, 0] - points[i, 0]
            ay = corners[j, 0, 1] - points[i, 1]
            az = corners[j, 0, 2] - points[i, 2]
            bx = corners[j, 1, 0] - points[i, 0]
            by = corners[j, 1, 1] - points[i, 1]
            bz = corners[j, 1, 2] - points[i, 2]
            cx = corners[j, 2, 0] - points[i, 0]
            cy = corners[j, 2, 1] - points[i, 1]
            cz = corners[j, 2, 2] - points[i, 2]
            la = math.sqrt(ax * ax + ay * ay + az * az)
            lb = math.sqrt(bx * bx + by * by + bz * bz)
            lc = math.sqrt(cx * cx + cy * cy + cz * cz)
            num = ax * (by * cz - bz * cy) + ay * (bz * cx - bx * cz) + az * (bx * cy - by * cx)
            den = (la * lb * lc + (ax * bx + ay * by + az * bz) * lc
                   + (ax * cx + ay * cy + az * cz) * lb + (bx * cx + by * cy + bz * cz) * la)
            acc += 2.0 * math.atan2(num, den)
        out[i] = acc / (4.0 * math.pi)
    return out


@njit(cache=True)
def _cell_value(flat, nx, ny, nz, ox, oy, oz, inv, px, py, pz):
    ux = (px - ox) * inv
    uy = (py - oy) * inv
    uz = (pz - oz) * inv
    i = min(max(int(math.floor(ux)), 0), nx - 2)
    j = min(max(int(math.floor(uy)), 0), ny - 2)
    k = min(max(int(math.floor(uz)), 0), nz - 2)
    tx, ty, tz = ux - i, uy - j, uz - k
    b = i + nx * (j + ny * k)
    sx, sxy = nx, nx * ny
    c00 = flat[b] + tx * (flat[b + 1] - flat[b])
    c10 = flat[b + sx] + tx * (flat[b + sx + 1] - flat[b + sx])
    c01 = flat[b + sxy] + tx * (flat[b + sxy + 1] - flat[b + sxy])
    c11 = flat[b + sxy + sx] + tx * (flat[b + sxy + sx + 1] - flat[b + sxy + sx])
    c0 = c00 + ty * (c10 - c00)
    c1 = c01 + ty * (c11 - c01)
    return c0 + tz * (c1 - c0)


@njit(cache=True)
def trilinear(flat, dims, origin, cell, points):
    """Value and gradient with the same clamping and snapping rules as SdfGrid.sample."""
    nx, ny, nz = dims[0], dims[1], dims[2]
    n = points.shape[0]
    value = np.empty(n)
    grad = np.empty((n, 3))
    size = np.array([nx - 1, ny - 1, nz - 1], dtype=np.float64) * cell
    u = np.empty(3)
    out = np.empty(3)
    idx = np.empty(3, dtype=np.int64)
    for p in range(n):
        dist2 = 0.0
        for a in range(3):
            q = points[p, a] - origin[a]
            c = min(max(q, 0.0), size[a])
            out[a] = q - c
            dist2 += out[a] * out[a]
            v = c / cell
            r = np.rint(v)
            if abs(v - r) < 1e-9:
                v = r
            lim = dims[a] - 2
            i = min(int(math.floor(v)), lim)
            idx[a] = i
            u[a] = v - i
        tx, ty, tz = u[0], u[1], u[2]
        b = idx[0] + nx * (idx[1] + ny * idx[2])
        sx, sxy = nx, nx * ny
        c000 = np.float64(flat[b])
        c100 = np.float64(flat[b + 1])
        c010 = np.float64(flat[b + sx])
        c110 = np.float64(flat[b + sx + 1])
        c001 = np.float64(flat[b + sxy])
        c101 = np.float64(flat[b + sxy + 1])
        c011 = np.float64(flat[b + sxy + sx])
        c111 = np.float64(flat[b + sxy + sx + 1])
        c00 = c000 + tx * (c100 - c000)
        c10 = c010 + tx * (c110 - c010)
        c01 = c001 + tx * (c101 - c001)
        c11 = c011 + tx * (c111 - c011)
        c0 = c00 + ty * (c10 - c00)
        c1 = c01 + ty * (c11 - c01)
        val = c0 + tz * (c1 - c0)
        gx = ((1 - ty) * (1 - tz) * (c100 - c000) + ty * (1 - tz) * (c110 - c010)
              + (1 - ty) * tz * (c101 - c001) + ty * tz * (c111 - c011)) / cell
        gy = ((1 - tz) * (c10 - c00) + tz * (c11 - c01)) / cell
        gz = (c1 - c0) / cell
        if dist2 > 0.0:
            d = math.sqrt(dist2)
            val += d
            gx = out[0] / d if out[0] != 0.0 else gx
            gy = out[1] / d if out[1] != 0.0 else gy
            gz = out[2] / d if out[2] != 0.0 else gz
        value[p] = val
        grad[p, 0] = gx
        grad[p, 1] = gy
        grad[p, 2] = gz
    return value, grad


@njit(cache=True)
def _boxed_value(flat, nx, ny, nz, ox, oy, oz, cell, hx, hy, hz, px, py, pz):
    """Trilinear value at the point clamped into the box plus its distance to the box."""
    cx = min(max(px, ox), hx)
    cy = min(max(py, oy), hy)
    cz = min(max(pz, oz), hz)
    val = _cell_value(flat, nx, ny, nz, ox, oy, oz, 1.0 / cell, cx, cy, cz)
    d2 = (px - cx) ** 2 + (py - cy) ** 2 + (pz - cz) ** 2
    if d2 > 0.0:
        val += math.sqrt(d2)
    return val


@njit(cache=True)
def soft_abs(x, delta):
    if delta <= 0.0:
        return abs(x)
    return math.sqrt(x * x + delta * delta) - delta


@njit(cache=True)
def screen_energies(local, contact, slot, k, order, flat, dims, origin, cell,
                    class_flat, lam_pen, lam_sem, delta, params, keep):
    """Placement energy of each (tx, ty, tz, theta) row for a rigidly placed clip.

    Frames are visited in `order`; a row is abandoned (status 1) once its
    partial sum exceeds the keep-th best complete energy, and rejected
    (status 2) as soon as a vertex leaves the grid box horizontally.
    Vertical excursions are charged like SdfGrid.sample does.
    """
    nx, ny, nz = dims[0], dims[1], dims[2]
    ox, oy, oz = origin[0], origin[1], origin[2]
    hx = ox + (nx - 1) * cell
    hy = oy + (ny - 1) * cell
    hz = oz + (nz - 1) * cell
    m = params.shape[0]
    frames, nv = contact.shape
    energy = np.full(m, np.inf)
    status = np.zeros(m, dtype=np.int8)
    best = np.full(keep, np.inf)
    for c in range(m):
        tx, ty, tz, th = params[c, 0], params[c, 1], params[c, 2], params[c, 3]
        co, si = math.cos(th), math.sin(th)
        total = 0.0
        bound = best[keep - 1]
        for fi in range(frames):
            f = order[fi]
            acc = 0.0
            for v in range(nv):
                lx, ly, lz = local[f, v, 0], local[f, v, 1], local[f, v, 2]
                px = co * lx + si * lz + tx
                py = ly + ty
                pz = -si * lx + co * lz + tz
                if px < ox or px > hx or pz < oz or pz > hz:
                    status[c] = 2
                    break
                s = _boxed_value(flat, nx, ny, nz, ox, oy, oz, cell, hx, hy, hz, px, py, pz)
                w = contact[f, v]
                if w > 0.0:
                    acc += w * soft_abs(s, delta)
                    if slot[f, v] >= 0 and lam_sem > 0.0:
                        d = _boxed_value(class_flat[slot[f, v]], nx, ny, nz, ox, oy, oz, cell,
                                         hx, hy, hz, px, py, pz)
                        acc += lam_sem * w * soft_abs(d, delta)
                if s < 0.0:
                    acc += lam_pen * s * s
            if status[c] == 2:
                break
            total += k[f] * acc
            if total > bound:
                status[c] = 1
                break
        if status[c] == 0:
            energy[c] = total
            if total < best[keep - 1]:
                i = keep - 1
                while i > 0 and best[i - 1] > total:
                    best[i] = best[i - 1]
                    i -= 1
                best[i] = total
        elif status[c] == 1:
            energy[c] = total
    return energy, status


@njit(cache=True)
def blend_skin(rot, pos, rest, rest_joints, idx, w):
    """Linear blend skinning with up to four influences: (F, N, 3)."""
    frames, n, kmax = rot.shape[0], rest.shape[0], idx.shape[1]
    out = np.zeros((frames, n, 3))
    for f in range(frames):
        for v in range(n):
            for k in range(kmax):
                wk = w[v, k]
                if wk == 0.0:
                    continue
                j = idx[v, k]
                lx = rest[v, 0] - rest_joints[j, 0]
                ly = rest[v, 1] - rest_joints[j, 1]
                lz = rest[v, 2] - rest_joints[j, 2]
                for a in range(3):
                    out[f, v, a] += wk * (rot[f, j, a, 0] * lx + rot[f, j, a, 1] * ly
                                          + rot[f, j, a, 2] * lz + pos[f, j, a])
    return out


@njit(cache=True)
def skin_moments(rot, pos, rest, rest_joints, idx, w, grad):
    """Per joint: sum of x_jv cross (w g_v) and of w g_v over the vertices it moves."""
    frames, n, kmax = rot.shape[0], rest.shape[0], idx.shape[1]
    nj = rot.shape[1]
    mom = np.zeros((frames, nj, 3))
    force = np.zeros((frames, nj, 3))
    for f in range(frames):
        for v in range(n):
            gx, gy, gz = grad[f, v, 0], grad[f, v, 1], grad[f, v, 2]
            for k in range(kmax):
                wk = w[v, k]
                if wk == 0.0:
                    continue
                j = idx[v, k]
                lx = rest[v, 0] - rest_joints[j, 0]
                ly = rest[v, 1] - rest_joints[j, 1]
                lz = rest[v, 2] - rest_joints[j, 2]
                px = rot[f, j, 0, 0] * lx + rot[f, j, 0, 1] * ly + rot[f, j, 0, 2] * lz + pos[f, j, 0]
                py = rot[f, j, 1, 0] * lx + rot[f, j, 1, 1] * ly + rot[f, j, 1, 2] * lz + pos[f, j, 1]
                pz = rot[f, j, 2, 0] * lx + rot[f, j, 2, 1] * ly + rot[f, j, 2, 2] * lz + pos[f, j, 2]
                ax, ay, az = wk * gx, wk * gy, wk * gz
                mom[f, j, 0] += py * az - pz * ay
                mom[f, j, 1] += pz * ax - px * az
                mom[f, j, 2] += px * ay - py * ax
                force[f, j, 0] += ax
                force[f, j, 1] += ay
                force[f, j, 2] += az
    return mom, force
