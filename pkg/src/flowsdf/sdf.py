"""Binary masks <-> truncated signed distance fields.

Sign convention: negative inside the object, positive outside, zero on the
discrete boundary (foreground pixels with a 4-connected background neighbour).
"""

import numba as nb
import numpy as np

_INF = np.iinfo(np.int64).max


def _as_mask(mask):
    mask = np.asarray(mask)
    if mask.ndim != 2 or min(mask.shape) < 1:
        raise ValueError(f"mask must be a non-empty 2-D array, got shape {mask.shape}")
    return mask.astype(bool)


def boundary_pixels(mask):
    """Foreground pixels with at least one in-grid 4-neighbour in the background."""
    fg = _as_mask(mask)
    bg_neighbour = np.zeros_like(fg)
    bg_neighbour[1:, :] |= ~fg[:-1, :]
    bg_neighbour[:-1, :] |= ~fg[1:, :]
    bg_neighbour[:, 1:] |= ~fg[:, :-1]
    bg_neighbour[:, :-1] |= ~fg[:, 1:]
    return (fg & bg_neighbour).astype(np.uint8)


@nb.njit(cache=True)
def _envelope_1d(f, out, v, z):
    # Lower envelope of parabolas (q - p)^2 + f[p] over the finite entries of f.
    n = f.shape[0]
    k = -1
    for q in range(n):
        if f[q] == _INF:
            continue
        if k < 0:
            k = 0
            v[0] = q
            z[0] = -np.inf
            z[1] = np.inf
            continue
        p = v[k]
        s = ((f[q] + q * q) - (f[p] + p * p)) / (2.0 * (q - p))
        while s <= z[k]:
            k -= 1
            p = v[k]
            s = ((f[q] + q * q) - (f[p] + p * p)) / (2.0 * (q - p))
        k += 1
        v[k] = q
        z[k] = s
        z[k + 1] = np.inf
    if k < 0:
        for q in range(n):
            out[q] = _INF
        return
    k = 0
    for q in range(n):
        while z[k + 1] < q:
            k += 1
        p = v[k]
        out[q] = (q - p) * (q - p) + f[p]


@nb.njit(cache=True)
def _edt_squared(seeds):
    h, w = seeds.shape
    n = max(h, w)
    v = np.empty(n, np.int64)
    z = np.empty(n + 1, np.float64)
    buf = np.empty(n, np.int64)
    col = np.empty((h, w), np.int64)
    for i in range(h):
        for j in range(w):
            col[i, j] = 0 if seeds[i, j] else _INF
    for j in range(w):
        _envelope_1d(col[:, j].copy(), buf[:h], v, z)
        for i in range(h):
            col[i, j] = buf[i]
    res = np.empty((h, w), np.int64)
    for i in range(h):
        _envelope_1d(col[i].copy(), buf[:w], v, z)
        for j in range(w):
            res[i, j] = buf[j]
    return res


def edt_squared(seeds):
    """Exact squared Euclidean distance from every pixel to the nearest seed.

    Two separable lower-envelope passes (columns, then rows) in integer
    arithmetic. Returns float64 with integer values, or ``inf`` everywhere
    when there are no seeds.
    """
    seeds = _as_mask(seeds)
    d = _edt_squared(np.ascontiguousarray(seeds)).astype(np.float64)
    d[d >= float(_INF)] = np.inf
    return d


def sdf_from_mask(mask, delta):
    """Truncated signed distance field of a binary mask, values in [-delta, delta]."""
    if not delta > 0:
        raise ValueError(f"delta must be positive, got {delta}")
    fg = _as_mask(mask)
    boundary = boundary_pixels(fg).astype(bool)
    if not boundary.any():
        return np.full(fg.shape, -float(delta) if fg.all() else float(delta))
    dist = np.minimum(np.sqrt(edt_squared(boundary)), delta)
    sdf = np.where(fg, -dist, dist)
    sdf[boundary] = 0.0
    return sdf


def mask_from_sdf(sdf):
    return (np.asarray(sdf) <= 0).astype(np.uint8)


def normalize_sdf(sdf, delta):
    if not delta > 0:
        raise ValueError(f"delta must be positive, got {delta}")
    return np.asarray(sdf) / delta


def denormalize_sdf(field, delta):
    if not delta > 0:
        raise ValueError(f"delta must be positive, got {delta}")
    return np.asarray(field) * delta


def binary_field(mask):
    """Binary mask rescaled to {-1, +1} with the SDF sign convention (inside negative)."""
    return 1.0 - 2.0 * _as_mask(mask).astype(np.float64)
