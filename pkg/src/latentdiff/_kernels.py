"""Fused elementwise kernels for the autodiff hot path.

Plain numpy spells these as chains of temporaries, which makes them memory
bound; a single fused pass is 5-10x faster at desk scale. numba is
optional: without it the callers fall back to the numpy expressions.
`fastmath` stays off so results are plain IEEE float64 and deterministic.
"""

from __future__ import annotations

import math

import numpy as np

try:
    from numba import njit, prange

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - exercised only without numba
    HAVE_NUMBA = False
    prange = range

    def njit(*args, **kwargs):
        def wrap(fn):
            return fn

        if args and callable(args[0]):
            return args[0]
        return wrap


_GELU_C = math.sqrt(2.0 / math.pi)
_GELU_A = 0.044715


@njit(cache=True)
def gelu_fwd(x):
    out = np.empty_like(x)
    t = np.empty_like(x)
    for i in range(x.size):
        xi = x[i]
        ti = math.tanh(_GELU_C * (xi + _GELU_A * xi * xi * xi))
        t[i] = ti
        out[i] = 0.5 * xi * (1.0 + ti)
    return out, t


@njit(cache=True)
def gelu_bwd(x, t, g):
    gx = np.empty_like(x)
    for i in range(x.size):
        xi = x[i]
        ti = t[i]
        du = _GELU_C * (1.0 + 3.0 * _GELU_A * xi * xi)
        gx[i] = g[i] * (0.5 * (1.0 + ti) + 0.5 * xi * (1.0 - ti * ti) * du)
    return gx


@njit(cache=True)
def layer_norm_fwd(x, gain, bias, eps):
    rows, d = x.shape
    out = np.empty_like(x)
    xhat = np.empty_like(x)
    inv = np.empty(rows, dtype=x.dtype)
    for r in range(rows):
        mu = 0.0
        for c in range(d):
            mu += x[r, c]
        mu /= d
        var = 0.0
        for c in range(d):
            diff = x[r, c] - mu
            var += diff * diff
        var /= d
        iv = 1.0 / math.sqrt(var + eps)
        inv[r] = iv
        for c in range(d):
            xh = (x[r, c] - mu) * iv
            xhat[r, c] = xh
            out[r, c] = xh * gain[c] + bias[c]
    return out, xhat, inv


@njit(cache=True)
def layer_norm_bwd(g, xhat, inv, gain, need_gx):
    rows, d = g.shape
    gx = np.empty_like(g) if need_gx else np.empty((0, 0), dtype=g.dtype)
    ggain = np.zeros(d, dtype=g.dtype)
    gbias = np.zeros(d, dtype=g.dtype)
    for r in range(rows):
        m1 = 0.0
        m2 = 0.0
        for c in range(d):
            dxh = g[r, c] * gain[c]
            m1 += dxh
            m2 += dxh * xhat[r, c]
            ggain[c] += g[r, c] * xhat[r, c]
            gbias[c] += g[r, c]
        m1 /= d
        m2 /= d
        if need_gx:
            iv = inv[r]
            for c in range(d):
                dxh = g[r, c] * gain[c]
                gx[r, c] = iv * (dxh - m1 - xhat[r, c] * m2)
    return gx, ggain, gbias


@njit(cache=True)
def softmax_fwd(x):
    rows, d = x.shape
    out = np.empty_like(x)
    for r in range(rows):
        mx = x[r, 0]
        for c in range(1, d):
            if x[r, c] > mx:
                mx = x[r, c]
        total = 0.0
        for c in range(d):
            e = math.exp(x[r, c] - mx)
            out[r, c] = e
            total += e
        for c in range(d):
            out[r, c] /= total
    return out


@njit(cache=True)
def softmax_bwd(g, y):
    rows, d = g.shape
    gx = np.empty_like(g)
    for r in range(rows):
        inner = 0.0
        for c in range(d):
            inner += g[r, c] * y[r, c]
        for c in range(d):
            gx[r, c] = (g[r, c] - inner) * y[r, c]
    return gx
