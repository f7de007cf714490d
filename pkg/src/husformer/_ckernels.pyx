# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled twins of the kernels in ``_pykernels``."""

import numpy as np
from libc.math cimport exp, sqrt


def softmax_forward(const double[:, ::1] x):
    cdef Py_ssize_t rows = x.shape[0], width = x.shape[1], i, j
    cdef double mx, total
    out = np.empty((rows, width))
    cdef double[:, ::1] y = out
    for i in range(rows):
        mx = x[i, 0]
        for j in range(1, width):
            if x[i, j] > mx:
                mx = x[i, j]
        total = 0.0
        for j in range(width):
            y[i, j] = exp(x[i, j] - mx)
            total += y[i, j]
        for j in range(width):
            y[i, j] = y[i, j] / total
    return out


def softmax_backward(const double[:, ::1] y, const double[:, ::1] gy):
    cdef Py_ssize_t rows = y.shape[0], width = y.shape[1], i, j
    cdef double dot
    out = np.empty((rows, width))
    cdef double[:, ::1] gx = out
    for i in range(rows):
        dot = 0.0
        for j in range(width):
            dot += gy[i, j] * y[i, j]
        for j in range(width):
            gx[i, j] = y[i, j] * (gy[i, j] - dot)
    return out


def layer_norm_forward(const double[:, ::1] x, const double[::1] gain,
                       const double[::1] bias, double eps):
    cdef Py_ssize_t rows = x.shape[0], width = x.shape[1], i, j
    cdef double mu, var, d, r
    out = np.empty((rows, width))
    xhat_arr = np.empty((rows, width))
    rstd_arr = np.empty(rows)
    cdef double[:, ::1] y = out
    cdef double[:, ::1] xhat = xhat_arr
    cdef double[::1] rstd = rstd_arr
    for i in range(rows):
        mu = 0.0
        for j in range(width):
            mu += x[i, j]
        mu = mu / width
        var = 0.0
        for j in range(width):
            d = x[i, j] - mu
            var += d * d
        var = var / width
        r = 1.0 / sqrt(var + eps)
        rstd[i] = r
        for j in range(width):
            xhat[i, j] = (x[i, j] - mu) * r
            y[i, j] = xhat[i, j] * gain[j] + bias[j]
    return out, xhat_arr, rstd_arr


def layer_norm_backward(const double[:, ::1] gy, const double[:, ::1] xhat,
                        const double[::1] rstd, const double[::1] gain):
    cdef Py_ssize_t rows = gy.shape[0], width = gy.shape[1], i, j
    cdef double m1, m2, g
    gx_arr = np.empty((rows, width))
    ggain_arr = np.zeros(width)
    gbias_arr = np.zeros(width)
    cdef double[:, ::1] gx = gx_arr
    cdef double[::1] ggain = ggain_arr
    cdef double[::1] gbias = gbias_arr
    for i in range(rows):
        m1 = 0.0
        m2 = 0.0
        for j in range(width):
            g = gy[i, j] * gain[j]
            m1 += g
            m2 += g * xhat[i, j]
            ggain[j] += gy[i, j] * xhat[i, j]
            gbias[j] += gy[i, j]
        m1 = m1 / width
        m2 = m2 / width
        for j in range(width):
            gx[i, j] = rstd[i] * (gy[i, j] * gain[j] - m1 - xhat[i, j] * m2)
    return gx_arr, ggain_arr, gbias_arr


def conv1d_forward(const double[:, :, ::1] x, const double[:, :, ::1] w):
    cdef Py_ssize_t nb = x.shape[0], lin = x.shape[1], t = x.shape[2]
    cdef Py_ssize_t lout = w.shape[0], k = w.shape[2], pad = k // 2
    cdef Py_ssize_t b, o, i, j, s, src
    cdef double acc
    out = np.empty((nb, lout, t))
    cdef double[:, :, ::1] y = out
    for b in range(nb):
        for o in range(lout):
            for s in range(t):
                acc = 0.0
                for i in range(lin):
                    for j in range(k):
                        src = s + j - pad
                        if 0 <= src < t:
                            acc += w[o, i, j] * x[b, i, src]
                y[b, o, s] = acc
    return out


def conv1d_backward(const double[:, :, ::1] gy, const double[:, :, ::1] x,
                    const double[:, :, ::1] w):
    cdef Py_ssize_t nb = x.shape[0], lin = x.shape[1], t = x.shape[2]
    cdef Py_ssize_t lout = w.shape[0], k = w.shape[2], pad = k // 2
    cdef Py_ssize_t b, o, i, j, s, src
    cdef double g
    gx_arr = np.zeros((nb, lin, t))
    gw_arr = np.zeros((lout, lin, k))
    cdef double[:, :, ::1] gx = gx_arr
    cdef double[:, :, ::1] gw = gw_arr
    for b in range(nb):
        for o in range(lout):
            for s in range(t):
                g = gy[b, o, s]
                if g == 0.0:
                    continue
                for i in range(lin):
                    for j in range(k):
                        src = s + j - pad
                        if 0 <= src < t:
                            gw[o, i, j] += g * x[b, i, src]
                            gx[b, i, src] += g * w[o, i, j]
    return gx_arr, gw_arr
