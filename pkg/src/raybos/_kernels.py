"""Compiled per-ray loops for the two hot paths.

These mirror ``GriddedField.sample`` + ``grin.trace_through_volume`` and
``sensor.accumulate_spot`` operation for operation; the numpy versions stay
the reference implementations and the test suite checks the two agree.
All kernels release the GIL so a thread pool scales across cores.
"""

import math

import numpy as np
from numba import njit

STATUS_OK = 0
STATUS_LOST = 5
STATUS_INVALID = 6


JIT = dict(cache=True, nogil=True, error_model="numpy")

# Grid geometry travels as a flat tuple of scalars so helper calls carry no
# array reference counting:
# (nx, ny, nz, ox, oy, oz, sx, sy, sz, lox, loy, loz, hix, hiy, hiz, tol, n_ambient)


def grid_tuple(dims, origin, spacing, lo, hi, tol, n_ambient):
    return (int(dims[0]), int(dims[1]), int(dims[2]), *map(float, origin), *map(float, spacing),
            *map(float, lo), *map(float, hi), float(tol), float(n_ambient))


@njit(**JIT)
def _cell(p, origin, spacing, dim):
    f = (p - origin) / spacing - 0.5
    if f < 0.0:
        f = 0.0
    elif f > dim - 1:
        f = dim - 1.0
    i0 = int(math.floor(f))
    if i0 > dim - 2:
        i0 = dim - 2
    return i0, f - i0


@njit(**JIT)
def _inside(g, x, y, z):
    tol = g[15]
    return not (x < g[9] - tol or x > g[12] + tol or y < g[10] - tol or y > g[13] + tol
                or z < g[11] - tol or z > g[14] + tol)


@njit(**JIT)
def _lerp(packed, q, s0, s1, tx, ty, tz):
    c00 = packed[q] * (1 - tz) + packed[q + 4] * tz
    c01 = packed[q + s1] * (1 - tz) + packed[q + s1 + 4] * tz
    c10 = packed[q + s0] * (1 - tz) + packed[q + s0 + 4] * tz
    c11 = packed[q + s0 + s1] * (1 - tz) + packed[q + s0 + s1 + 4] * tz
    c0 = c00 * (1 - ty) + c01 * ty
    c1 = c10 * (1 - ty) + c11 * ty
    return c0 * (1 - tx) + c1 * tx


@njit(**JIT)
def _sample(packed, g, x, y, z):
    if not _inside(g, x, y, z):
        return g[16], 0.0, 0.0, 0.0
    ix, tx = _cell(x, g[3], g[6], g[0])
    iy, ty = _cell(y, g[4], g[7], g[1])
    iz, tz = _cell(z, g[5], g[8], g[2])
    # packed is the flat (Nx*Ny*Nz*4) array of [n, gx, gy, gz] per node
    s1 = g[2] * 4
    s0 = g[1] * s1
    b = ix * s0 + iy * s1 + iz * 4
    return (_lerp(packed, b, s0, s1, tx, ty, tz), _lerp(packed, b + 1, s0, s1, tx, ty, tz),
            _lerp(packed, b + 2, s0, s1, tx, ty, tz), _lerp(packed, b + 3, s0, s1, tx, ty, tz))


@njit(**JIT)
def _D(packed, g, x, y, z, h):
    n, gx, gy, gz = _sample(packed, g, x, y, z)
    return n * gx * h, n * gy * h, n * gz * h


@njit(**JIT)
def _rk4(packed, g, r0, r1, r2, t0, t1, t2, h):
    a0, a1, a2 = _D(packed, g, r0, r1, r2, h)
    b0, b1, b2 = _D(packed, g, r0 + (0.5 * t0 + 0.125 * a0) * h, r1 + (0.5 * t1 + 0.125 * a1) * h,
                    r2 + (0.5 * t2 + 0.125 * a2) * h, h)
    c0, c1, c2 = _D(packed, g, r0 + (t0 + 0.5 * b0) * h, r1 + (t1 + 0.5 * b1) * h, r2 + (t2 + 0.5 * b2) * h, h)
    return (r0 + (t0 + (a0 + 2.0 * b0) / 6.0) * h,
            r1 + (t1 + (a1 + 2.0 * b1) / 6.0) * h,
            r2 + (t2 + (a2 + 2.0 * b2) / 6.0) * h,
            t0 + (a0 + 4.0 * b0 + c0) / 6.0,
            t1 + (a1 + 4.0 * b1 + c1) / 6.0,
            t2 + (a2 + 4.0 * b2 + c2) / 6.0)


@njit(**JIT)
def _slab_axis(o, v, lo, hi, t_near, t_far, outside):
    if v == 0.0:
        return t_near, t_far, outside or o < lo or o > hi
    inv = 1.0 / v
    ta = (lo - o) * inv
    tb = (hi - o) * inv
    return max(t_near, min(ta, tb)), min(t_far, max(ta, tb)), outside


@njit(**JIT)
def _slab(g, o0, o1, o2, v0, v1, v2):
    t_near, t_far, outside = _slab_axis(o0, v0, g[9], g[12], -np.inf, np.inf, False)
    t_near, t_far, outside = _slab_axis(o1, v1, g[10], g[13], t_near, t_far, outside)
    t_near, t_far, outside = _slab_axis(o2, v2, g[11], g[14], t_near, t_far, outside)
    return t_near, t_far, t_near <= t_far and not outside


@njit(**JIT)
def trace_gridded(origins, directions, packed, g, h, max_steps, out_o, out_d, status):
    for r in range(origins.shape[0]):
        o0, o1, o2 = origins[r, 0], origins[r, 1], origins[r, 2]
        d0, d1, d2 = directions[r, 0], directions[r, 1], directions[r, 2]
        t_in, t_out, hit = _slab(g, o0, o1, o2, d0, d1, d2)
        if not hit or t_out < 0.0:
            continue
        if t_in < 0.0:
            t_in = 0.0
        if not t_out > t_in:
            continue
        r0, r1, r2 = o0 + t_in * d0, o1 + t_in * d1, o2 + t_in * d2
        n, _, _, _ = _sample(packed, g, r0, r1, r2)
        t0, t1, t2 = n * d0, n * d1, n * d2
        steps = 0
        while True:
            if steps >= max_steps:
                status[r] = STATUS_LOST
                break
            q0, q1, q2, u0, u1, u2 = _rk4(packed, g, r0, r1, r2, t0, t1, t2, h)
            if not (math.isfinite(q0) and math.isfinite(q1) and math.isfinite(q2)
                    and math.isfinite(u0) and math.isfinite(u1) and math.isfinite(u2)):
                status[r] = STATUS_INVALID
                break
            if not _inside(g, q0, q1, q2):
                _, s, _ = _slab(g, r0, r1, r2, q0 - r0, q1 - r1, q2 - r2)
                s = min(max(s, 0.0), 1.0)
                q0, q1, q2, u0, u1, u2 = _rk4(packed, g, r0, r1, r2, t0, t1, t2, h * s)
                norm = math.sqrt(u0 * u0 + u1 * u1 + u2 * u2)
                out_o[r, 0], out_o[r, 1], out_o[r, 2] = q0, q1, q2
                out_d[r, 0], out_d[r, 1], out_d[r, 2] = u0 / norm, u1 / norm, u2 / norm
                break
            r0, r1, r2, t0, t1, t2 = q0, q1, q2, u0, u1, u2
            steps += 1


@njit(**JIT)
def deposit_spots(img, px, energy, sigma_px, half):
    """Pixel-integrated Gaussian spots added in input order."""
    H, W = img.shape
    k = int(math.ceil(2.0 * half)) + 1
    wx = np.empty(k)
    wy = np.empty(k)
    scale = 1.0 / (math.sqrt(2.0) * sigma_px)
    for r in range(px.shape[0]):
        cx = px[r, 0]
        cy = px[r, 1]
        if not (math.isfinite(cx) and math.isfinite(cy)):
            continue
        x0 = int(math.floor(cx - half))
        y0 = int(math.floor(cy - half))
        prev_x = math.erf((x0 - cx) * scale)
        prev_y = math.erf((y0 - cy) * scale)
        for j in range(k):
            ex = math.erf((x0 + j + 1 - cx) * scale)
            ey = math.erf((y0 + j + 1 - cy) * scale)
            wx[j] = 0.5 * (ex - prev_x)
            wy[j] = 0.5 * (ey - prev_y)
            prev_x = ex
            prev_y = ey
        e = energy[r]
        for jy in range(k):
            row = y0 + jy
            if row < 0 or row >= H:
                continue
            ew = e * wy[jy]
            for jx in range(k):
                col = x0 + jx
                if col < 0 or col >= W:
                    continue
                img[row, col] += ew * wx[jx]
