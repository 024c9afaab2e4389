"""Fused elementwise loops for the LSTM recurrences.

Transcendentals stay in numpy (its SIMD tanh is far faster than scalar
libm calls); numba handles the arithmetic that would otherwise cost one
numpy call per operation. All arrays are feature-major: rows are units,
columns are batch entries.
"""
from __future__ import annotations

import math

import numpy as np
from numba import njit


@njit(cache=True)
def gate_update(a, c_prev, c, first):
    """``a`` holds tanh of the half-scaled sigmoid pre-activations (rows 0..3H)
    and tanh of the candidate (rows 3H..4H). Converts the first 3H rows to
    sigmoids in place and writes ``c = f * c_prev + i * g``."""
    H, B = c.shape
    for j in range(H):
        for b in range(B):
            f = 0.5 * a[j, b] + 0.5
            i = 0.5 * a[H + j, b] + 0.5
            a[j, b] = f
            a[H + j, b] = i
            a[2 * H + j, b] = 0.5 * a[2 * H + j, b] + 0.5
            if first:
                c[j, b] = i * a[3 * H + j, b]
            else:
                c[j, b] = f * c_prev[j, b] + i * a[3 * H + j, b]


@njit(cache=True)
def bptt_step(a, c_prev, tc, dh, dc, dz, first):
    """Gate gradients for one time step.

    ``dc`` carries the cell-state gradient from step t+1 on entry and the
    gradient to pass to step t-1 on exit. ``dz`` receives the gradient of
    the loss with respect to the pre-activations, gate order f, i, o, g.
    """
    H, B = dc.shape
    for j in range(H):
        for b in range(B):
            f = a[j, b]
            i = a[H + j, b]
            o = a[2 * H + j, b]
            g = a[3 * H + j, b]
            t = tc[j, b]
            d = dc[j, b] + dh[j, b] * o * (1.0 - t * t)
            dz[2 * H + j, b] = dh[j, b] * t * o * (1.0 - o)
            if first:
                dz[j, b] = 0.0
            else:
                dz[j, b] = d * c_prev[j, b] * f * (1.0 - f)
            dz[H + j, b] = d * g * i * (1.0 - i)
            dz[3 * H + j, b] = d * i * (1.0 - g * g)
            dc[j, b] = d * f


@njit(cache=True)
def recur(Zx, U, c, h, out):
    """Sample-by-sample LSTM recurrence with persistent state.

    ``Zx`` [n, 4H] holds the input projections (W x + b) of a block. ``c``
    and ``h`` are updated in place; hidden outputs go to ``out`` [n, H].
    """
    n, H4 = Zx.shape
    H = H4 // 4
    z = np.empty(H4, Zx.dtype)
    for t in range(n):
        for r in range(H4):
            acc = Zx[t, r]
            for j in range(H):
                acc += U[r, j] * h[j]
            z[r] = acc
        for j in range(H):
            f = 1.0 / (1.0 + math.exp(-z[j]))
            i = 1.0 / (1.0 + math.exp(-z[H + j]))
            o = 1.0 / (1.0 + math.exp(-z[2 * H + j]))
            g = math.tanh(z[3 * H + j])
            c[j] = f * c[j] + i * g
            h[j] = o * math.tanh(c[j])
            out[t, j] = h[j]
