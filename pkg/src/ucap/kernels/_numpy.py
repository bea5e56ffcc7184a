"""Pure-numpy reference kernels."""

import numpy as np


def sigmoid(x):
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def lstm_forward(gates, c):
    """Pointwise half of an LSTM cell.

    ``gates`` holds the pre-activations laid out as [input, forget, output,
    candidate] blocks of width H. Returns ``(h, c_new, cache)``.
    """
    H = c.shape[1]
    i = sigmoid(gates[:, :H])
    f = sigmoid(gates[:, H:2 * H])
    o = sigmoid(gates[:, 2 * H:3 * H])
    g = np.tanh(gates[:, 3 * H:])
    c_new = f * c + i * g
    tc = np.tanh(c_new)
    h = o * tc
    cache = np.concatenate([i, f, o, g, tc], axis=1)
    return h, c_new, cache


def lstm_backward(dh, dc_new, c, cache):
    H = c.shape[1]
    i = cache[:, :H]
    f = cache[:, H:2 * H]
    o = cache[:, 2 * H:3 * H]
    g = cache[:, 3 * H:4 * H]
    tc = cache[:, 4 * H:]
    dc = dc_new + dh * o * (1.0 - tc * tc)
    dgates = np.concatenate([
        dc * g * i * (1.0 - i),
        dc * c * f * (1.0 - f),
        dh * tc * o * (1.0 - o),
        dc * i * (1.0 - g * g),
    ], axis=1)
    return dgates, dc * f


def log_softmax_forward(x):
    m = x.max(axis=1, keepdims=True)
    z = x - m
    return z - np.log(np.exp(z).sum(axis=1, keepdims=True))


def log_softmax_backward(dout, out):
    return dout - np.exp(out) * dout.sum(axis=1, keepdims=True)


def adam_update(w, g, m, v, lr, beta1, beta2, eps, step):
    m *= beta1
    m += (1.0 - beta1) * g
    v *= beta2
    v += (1.0 - beta2) * g * g
    mhat = m / (1.0 - beta1 ** step)
    vhat = v / (1.0 - beta2 ** step)
    w -= lr * mhat / (np.sqrt(vhat) + eps)
