"""Independent scalar reference implementations used by the tests.

Nothing here imports the package's math; each routine is written from first
principles with the ``math`` module so it can catch errors in the vectorized code.
"""

from __future__ import annotations

import math


def quat_from_rotvec(r):
    angle = math.sqrt(r[0] ** 2 + r[1] ** 2 + r[2] ** 2)
    if angle == 0.0:
        return (1.0, 0.0, 0.0, 0.0)
    s = math.sin(angle / 2.0) / angle
    return (math.cos(angle / 2.0), r[0] * s, r[1] * s, r[2] * s)


def quat_mul(a, b):
    aw, ax, ay, az = a
    bw, bx, by, bz = b
    return (aw * bw - ax * bx - ay * by - az * bz,
            aw * bx + ax * bw + ay * bz - az * by,
            aw * by - ax * bz + ay * bw + az * bx,
            aw * bz + ax * by - ay * bx + az * bw)


def quat_rotate(q, v):
    w, x, y, z = quat_mul(quat_mul(q, (0.0, v[0], v[1], v[2])), (q[0], -q[1], -q[2], -q[3]))
    return (x, y, z)


def quat_matrix(r):
    q = quat_from_rotvec(r)
    cols = [quat_rotate(q, e) for e in ((1.0, 0.0, 0.0), (0.0, 1.0, 0.0), (0.0, 0.0, 1.0))]
    return [[cols[j][i] for j in range(3)] for i in range(3)]


def to_polar(x, y, z):
    d = math.sqrt(x * x + y * y + z * z)
    phi = math.acos(max(-1.0, min(1.0, z / d)))
    theta = math.atan2(y, x)
    if theta >= math.pi:
        theta -= 2.0 * math.pi
    return phi, theta, d


def warp_pixel(u, v, depth, fx, fy, cx, cy, t, r):
    """Optical pixel (u, v) with z-depth -> polar point in the agent frame.

    Optical axes (x right, y down, z forward) map to body axes
    (x forward, y left, z up) as body = (z, -x, -y).
    """
    xo = (u - cx) / fx * depth
    yo = (v - cy) / fy * depth
    zo = depth
    body = (zo, -xo, -yo)
    rx, ry, rz = quat_rotate(quat_from_rotvec(r), body)
    return to_polar(rx + t[0], ry + t[1], rz + t[2])


def brute_smooth(mean, var, N):
    """Inverse-variance weighted N x N average, one pixel at a time.

    ``mean`` and ``var`` are nested lists [row][col][channel]; mean channels
    0-1 are angles and are copied.  Rows clamp, columns wrap.  Accumulation
    order is row-major over the patch, matching a plain double sum.
    """
    h, w = len(mean), len(mean[0])
    r = N // 2
    nch = len(var[0][0])
    out = []
    for i in range(h):
        row = []
        for j in range(w):
            num = [0.0] * nch
            den = [0.0] * nch
            for k in range(-r, r + 1):
                ii = min(max(i + k, 0), h - 1)
                for l in range(-r, r + 1):
                    jj = (j + l) % w
                    for c in range(nch):
                        wt = 1.0 / var[ii][jj][c]
                        num[c] += mean[ii][jj][2 + c] * wt
                        den[c] += wt
            row.append(mean[i][j][:2] + [num[c] / den[c] for c in range(nch)])
        out.append(row)
    return out


def bisect_raycast(f, origin, direction, t_max=50.0, samples=20000):
    """First sign change of the implicit function f along the ray, refined by bisection.

    f(p) is negative inside the surface's solid and positive outside (or the
    reverse); only a sign change matters.  Returns math.inf on a miss.
    """
    def at(s):
        return f([origin[i] + s * direction[i] for i in range(3)])

    prev_s, prev_v = 1e-9, at(1e-9)
    for k in range(1, samples + 1):
        s = t_max * k / samples
        v = at(s)
        if (v > 0) != (prev_v > 0):
            lo, hi, vlo = prev_s, s, prev_v
            for _ in range(100):
                mid = 0.5 * (lo + hi)
                vm = at(mid)
                if (vm > 0) == (vlo > 0):
                    lo, vlo = mid, vm
                else:
                    hi = mid
            return 0.5 * (lo + hi)
        prev_s, prev_v = s, v
    return math.inf


def ekf_contraction(var0, obs_var, k):
    """Scalar Kalman variance after k identical measurements."""
    return 1.0 / (1.0 / var0 + k / obs_var)
