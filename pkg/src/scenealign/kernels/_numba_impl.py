"""Numba-compiled point-cloud kernels.

Same contracts as ``_numpy_impl``; see the docstrings there. Kernels are
sequential (no ``parallel=True``) so results are reproducible run-to-run and
bit-identical to the NumPy fallback.
"""

import numpy as np
from numba import njit


@njit(cache=True)
def farthest_point_indices(xyz, m, start):
    n = xyz.shape[0]
    out = np.empty(m, dtype=np.int64)
    out[0] = start
    dist = np.full(n, np.inf)
    for k in range(1, m):
        last = out[k - 1]
        best = 0
        best_d = -1.0
        for i in range(n):
            dx = xyz[i, 0] - xyz[last, 0]
            dy = xyz[i, 1] - xyz[last, 1]
            dz = xyz[i, 2] - xyz[last, 2]
            d2 = dx * dx + dy * dy + dz * dz
            if d2 < dist[i]:
                dist[i] = d2
            if dist[i] > best_d:
                best_d = dist[i]
                best = i
        out[k] = best
    return out


@njit(cache=True)
def ball_knn(points, centers, radius, k):
    n = points.shape[0]
    m = centers.shape[0]
    r2 = radius * radius
    idx = np.full((m, k), -1, dtype=np.int64)
    counts = np.zeros(m, dtype=np.int64)
    best_d = np.empty(k, dtype=np.float64)
    for s in range(m):
        filled = 0
        for j in range(n):
            dx = centers[s, 0] - points[j, 0]
            dy = centers[s, 1] - points[j, 1]
            dz = centers[s, 2] - points[j, 2]
            d2 = dx * dx + dy * dy + dz * dz
            if d2 > r2:
                continue
            if filled < k:
                pos = filled
                while pos > 0 and best_d[pos - 1] > d2:
                    best_d[pos] = best_d[pos - 1]
                    idx[s, pos] = idx[s, pos - 1]
                    pos -= 1
                best_d[pos] = d2
                idx[s, pos] = j
                filled += 1
            elif d2 < best_d[k - 1]:
                pos = k - 1
                while pos > 0 and best_d[pos - 1] > d2:
                    best_d[pos] = best_d[pos - 1]
                    idx[s, pos] = idx[s, pos - 1]
                    pos -= 1
                best_d[pos] = d2
                idx[s, pos] = j
        counts[s] = filled
        if 0 < filled < k:
            for slot in range(filled, k):
                idx[s, slot] = idx[s, 0]
    return idx, counts


@njit(cache=True)
def splat_zbuffer(u, v, depth, rgb, height, width, radius):
    img = np.ones((height, width, 3), dtype=np.float64)
    zbuf = np.full((height, width), np.inf)
    n = u.shape[0]
    r2 = radius * radius
    span = int(np.ceil(radius))
    for i in range(n):
        bx = int(np.floor(u[i]))
        by = int(np.floor(v[i]))
        for oy in range(-span, span + 2):
            py = by + oy
            if py < 0 or py >= height:
                continue
            for ox in range(-span, span + 2):
                px = bx + ox
                if px < 0 or px >= width:
                    continue
                dx = px - u[i]
                dy = py - v[i]
                if dx * dx + dy * dy <= r2 and depth[i] < zbuf[py, px]:
                    zbuf[py, px] = depth[i]
                    img[py, px, 0] = rgb[i, 0]
                    img[py, px, 1] = rgb[i, 1]
                    img[py, px, 2] = rgb[i, 2]
    return img
