"""NumPy implementations of the hot kernels.

Every function here has a twin of the same name and signature in the compiled
``_ckernels`` extension. Inputs are C-contiguous float64 arrays; 2-D kernels
operate row-wise on ``(rows, width)`` arrays.
"""

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


def softmax_forward(x):
    shifted = x - x.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def softmax_backward(y, gy):
    dot = (gy * y).sum(axis=1, keepdims=True)
    return y * (gy - dot)


def layer_norm_forward(x, gain, bias, eps):
    mu = x.mean(axis=1, keepdims=True)
    centered = x - mu
    var = (centered * centered).mean(axis=1, keepdims=True)
    rstd = 1.0 / np.sqrt(var + eps)
    xhat = centered * rstd
    return xhat * gain + bias, xhat, rstd[:, 0].copy()


def layer_norm_backward(gy, xhat, rstd, gain):
    gxhat = gy * gain
    width = xhat.shape[1]
    m1 = gxhat.sum(axis=1, keepdims=True) / width
    m2 = (gxhat * xhat).sum(axis=1, keepdims=True) / width
    gx = rstd[:, None] * (gxhat - m1 - xhat * m2)
    return gx, (gy * xhat).sum(axis=0), gy.sum(axis=0)


def _columns(x, k):
    pad = k // 2
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad)))
    # (B, Lin, T, k) -> (B, T, Lin, k)
    win = sliding_window_view(xp, k, axis=2).transpose(0, 2, 1, 3)
    b, t = win.shape[0], win.shape[1]
    return win.reshape(b * t, -1)


def conv1d_forward(x, w):
    b, _, t = x.shape
    lout, _, k = w.shape
    cols = _columns(x, k)
    y = cols @ w.reshape(lout, -1).T
    return np.ascontiguousarray(y.reshape(b, t, lout).transpose(0, 2, 1))


def conv1d_backward(gy, x, w):
    b, lin, t = x.shape
    lout, _, k = w.shape
    pad = k // 2
    g2 = gy.transpose(0, 2, 1).reshape(b * t, lout)
    gw = (g2.T @ _columns(x, k)).reshape(w.shape)
    gcols = (g2 @ w.reshape(lout, -1)).reshape(b, t, lin, k)
    gxp = np.zeros((b, lin, t + 2 * pad))
    for j in range(k):
        gxp[:, :, j:j + t] += gcols[:, :, :, j].transpose(0, 2, 1)
    return np.ascontiguousarray(gxp[:, :, pad:pad + t]), gw
