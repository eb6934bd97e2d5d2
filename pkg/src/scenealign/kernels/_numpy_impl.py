"""Pure-NumPy reference implementations of the hot point-cloud kernels.

These mirror the numba kernels in ``_numba_impl`` op-for-op (same arithmetic
order, same tie-breaking) so either path can be selected via the
``SCENEALIGN_NUMBA`` environment flag without changing results.
"""

import numpy as np


def farthest_point_indices(xyz: np.ndarray, m: int, start: int) -> np.ndarray:
    """Greedy farthest-point sampling.

    Args:
        xyz: (N, 3) float64 coordinates.
        m: number of samples, 1 <= m <= N.
        start: index of the first selected point.

    Returns:
        (m,) int64 selected indices. Ties in the farthest-point argmax go to
        the lowest index.
    """
    n = xyz.shape[0]
    out = np.empty(m, dtype=np.int64)
    out[0] = start
    dist = np.full(n, np.inf)
    for k in range(1, m):
        d = xyz - xyz[out[k - 1]]
        d2 = d[:, 0] * d[:, 0] + d[:, 1] * d[:, 1] + d[:, 2] * d[:, 2]
        np.minimum(dist, d2, out=dist)
        out[k] = int(np.argmax(dist))
    return out


def ball_knn(points: np.ndarray, centers: np.ndarray, radius: float, k: int, chunk: int = 512):
    """Up to k nearest points within ``radius`` of each center.

    Returns (idx, counts): idx is (M, k) int64 ordered by (distance, index)
    ascending; unused slots repeat the nearest member, or are -1 when no
    point falls inside the ball. counts is the number of members found,
    capped at k. The selected sets depend only on the geometry, never on
    point order (ties in distance go to the lower index).
    """
    m = centers.shape[0]
    r2 = radius * radius
    idx = np.full((m, k), -1, dtype=np.int64)
    counts = np.zeros(m, dtype=np.int64)
    for lo in range(0, m, chunk):
        hi = min(lo + chunk, m)
        d = centers[lo:hi, None, :] - points[None, :, :]
        d2 = d[..., 0] * d[..., 0] + d[..., 1] * d[..., 1] + d[..., 2] * d[..., 2]
        inside = d2 <= r2
        d2 = np.where(inside, d2, np.inf)
        order = np.argsort(d2, axis=1, kind="stable")[:, :k]
        valid = np.take_along_axis(inside, order, axis=1)
        counts[lo:hi] = valid.sum(axis=1)
        pad = np.where(counts[lo:hi] > 0, order[:, 0], -1)
        idx[lo:hi] = np.where(valid, order, pad[:, None])
    return idx, counts


def splat_zbuffer(
    u: np.ndarray,
    v: np.ndarray,
    depth: np.ndarray,
    rgb: np.ndarray,
    height: int,
    width: int,
    radius: float,
) -> np.ndarray:
    """Rasterize points as fixed-radius discs with a per-pixel z-buffer.

    Pixel (py, px) takes the color of the nearest-depth point whose disc
    covers it: (px - u)**2 + (py - v)**2 <= radius**2. Depth ties go to the
    lowest point index. Background is white.

    Args:
        u, v: (N,) float64 projected pixel coordinates (x right, y down).
        depth: (N,) float64 positive view depths.
        rgb: (N, 3) float64 colors in [0, 1].
        height, width: image extent.
        radius: disc radius in pixels.

    Returns:
        (height, width, 3) float64 image.
    """
    img = np.ones((height * width, 3), dtype=np.float64)
    n = u.shape[0]
    if n == 0:
        return img.reshape(height, width, 3)
    r2 = radius * radius
    span = int(np.ceil(radius))
    offs = np.arange(-span, span + 2, dtype=np.int64)
    base_x = np.floor(u).astype(np.int64)
    base_y = np.floor(v).astype(np.int64)
    # Candidate grid in the same (point-major, dy outer, dx inner) order as
    # the numba kernel so tie-breaking matches.
    px = (base_x[:, None, None] + offs[None, None, :]).reshape(n, -1)
    py = (base_y[:, None, None] + offs[None, :, None]).reshape(n, -1)
    dx = px - u[:, None]
    dy = py - v[:, None]
    cover = (dx * dx + dy * dy <= r2) & (px >= 0) & (px < width) & (py >= 0) & (py < height)
    flat = cover.reshape(-1)
    if not flat.any():
        return img.reshape(height, width, 3)
    k = px.shape[1]
    pix = (py * width + px).reshape(-1)[flat]
    dep = np.repeat(depth, k)[flat]
    col = np.repeat(rgb, k, axis=0)[flat]
    zbuf = np.full(height * width, np.inf)
    np.minimum.at(zbuf, pix, dep)
    win = dep == zbuf[pix]
    uniq, first = np.unique(pix[win], return_index=True)
    img[uniq] = col[win][first]
    return img.reshape(height, width, 3)
