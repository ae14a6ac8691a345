"""Exact squared Euclidean distance transform (lower envelope of parabolas).

Two separable passes of the 1-D algorithm of Felzenszwalb & Huttenlocher:
columns first, then rows. Both passes also track the index of the winning
parabola so callers can recover the nearest feature pixel.
"""
import numpy as np
from numba import njit, prange

# Stand-in for +inf; large enough that no real parabola is dominated by it,
# small enough that arithmetic on it stays finite.
FAR = 1e20


@njit(cache=True)
def _envelope_1d(f, n, d, arg, v, z):
    # f: sampled function (length n); d, arg: outputs; v, z: scratch.
    k = 0
    v[0] = 0
    z[0] = -np.inf
    z[1] = np.inf
    for q in range(1, n):
        s = ((f[q] + q * q) - (f[v[k]] + v[k] * v[k])) / (2.0 * q - 2.0 * v[k])
        while s <= z[k]:
            k -= 1
            s = ((f[q] + q * q) - (f[v[k]] + v[k] * v[k])) / (2.0 * q - 2.0 * v[k])
        k += 1
        v[k] = q
        z[k] = s
        z[k + 1] = np.inf
    k = 0
    for q in range(n):
        while z[k + 1] < q:
            k += 1
        dq = q - v[k]
        d[q] = dq * dq + f[v[k]]
        arg[q] = v[k]


@njit(parallel=True, cache=True)
def squared_edt(mask):
    """Squared distance to the nearest True pixel, plus its (row, col)."""
    h, w = mask.shape
    col_d = np.empty((h, w), np.float64)
    col_arg = np.empty((h, w), np.int64)
    for x in prange(w):
        f = np.empty(h, np.float64)
        d = np.empty(h, np.float64)
        arg = np.empty(h, np.int64)
        v = np.empty(h, np.int64)
        z = np.empty(h + 1, np.float64)
        for y in range(h):
            f[y] = 0.0 if mask[y, x] else FAR
        _envelope_1d(f, h, d, arg, v, z)
        for y in range(h):
            col_d[y, x] = d[y]
            col_arg[y, x] = arg[y]

    out_d = np.empty((h, w), np.float64)
    near_r = np.empty((h, w), np.int64)
    near_c = np.empty((h, w), np.int64)
    for y in prange(h):
        d = np.empty(w, np.float64)
        arg = np.empty(w, np.int64)
        v = np.empty(w, np.int64)
        z = np.empty(w + 1, np.float64)
        _envelope_1d(col_d[y], w, d, arg, v, z)
        for x in range(w):
            c = arg[x]
            out_d[y, x] = d[x]
            near_c[y, x] = c
            near_r[y, x] = col_arg[y, c]
    return out_d, near_r, near_c
