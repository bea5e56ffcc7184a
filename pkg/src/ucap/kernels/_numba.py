"""Fused numba kernels mirroring :mod:`ucap.kernels._numpy`.

No fastmath: results must stay reproducible run to run.
"""

import math

import numpy as np
from numba import njit


@njit(cache=True, inline="always")
def _sig(x):
    if x >= 0.0:
        return 1.0 / (1.0 + math.exp(-x))
    ex = math.exp(x)
    return ex / (1.0 + ex)


@njit(cache=True)
def sigmoid(x):
    out = np.empty_like(x)
    flat_in = x.ravel()
    flat_out = out.ravel()
    for k in range(flat_in.size):
        flat_out[k] = _sig(flat_in[k])
    return out


@njit(cache=True)
def lstm_forward(gates, c):
    B, H = c.shape
    h = np.empty((B, H))
    c_new = np.empty((B, H))
    cache = np.empty((B, 5 * H))
    for b in range(B):
        for j in range(H):
            i = _sig(gates[b, j])
            f = _sig(gates[b, H + j])
            o = _sig(gates[b, 2 * H + j])
            g = math.tanh(gates[b, 3 * H + j])
            cn = f * c[b, j] + i * g
            tc = math.tanh(cn)
            c_new[b, j] = cn
            h[b, j] = o * tc
            cache[b, j] = i
            cache[b, H + j] = f
            cache[b, 2 * H + j] = o
            cache[b, 3 * H + j] = g
            cache[b, 4 * H + j] = tc
    return h, c_new, cache


@njit(cache=True)
def lstm_backward(dh, dc_new, c, cache):
    B, H = c.shape
    dgates = np.empty((B, 4 * H))
    dc_prev = np.empty((B, H))
    for b in range(B):
        for j in range(H):
            i = cache[b, j]
            f = cache[b, H + j]
            o = cache[b, 2 * H + j]
            g = cache[b, 3 * H + j]
            tc = cache[b, 4 * H + j]
            dc = dc_new[b, j] + dh[b, j] * o * (1.0 - tc * tc)
            dgates[b, j] = dc * g * i * (1.0 - i)
            dgates[b, H + j] = dc * c[b, j] * f * (1.0 - f)
            dgates[b, 2 * H + j] = dh[b, j] * tc * o * (1.0 - o)
            dgates[b, 3 * H + j] = dc * i * (1.0 - g * g)
            dc_prev[b, j] = dc * f
    return dgates, dc_prev


@njit(cache=True)
def log_softmax_forward(x):
    B, V = x.shape
    out = np.empty((B, V))
    for b in range(B):
        m = x[b, 0]
        for k in range(1, V):
            if x[b, k] > m:
                m = x[b, k]
        s = 0.0
        for k in range(V):
            s += math.exp(x[b, k] - m)
        lse = math.log(s)
        for k in range(V):
            out[b, k] = x[b, k] - m - lse
    return out


@njit(cache=True)
def log_softmax_backward(dout, out):
    B, V = out.shape
    dx = np.empty((B, V))
    for b in range(B):
        s = 0.0
        for k in range(V):
            s += dout[b, k]
        for k in range(V):
            dx[b, k] = dout[b, k] - math.exp(out[b, k]) * s
    return dx


@njit(cache=True)
def adam_update(w, g, m, v, lr, beta1, beta2, eps, step):
    c1 = 1.0 - beta1 ** step
    c2 = 1.0 - beta2 ** step
    fw = w.ravel()
    fg = g.ravel()
    fm = m.ravel()
    fv = v.ravel()
    for k in range(fw.size):
        fm[k] = beta1 * fm[k] + (1.0 - beta1) * fg[k]
        fv[k] = beta2 * fv[k] + (1.0 - beta2) * fg[k] * fg[k]
        fw[k] -= lr * (fm[k] / c1) / (math.sqrt(fv[k] / c2) + eps)
