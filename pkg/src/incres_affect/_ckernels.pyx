# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled NHWC convolution/pooling kernels.

Signatures mirror the numpy versions in ``kernels.py``; inputs must already
be padded and C-contiguous float64.
"""
import numpy as np
cimport numpy as cnp

cnp.import_array()


def im2col(const double[:, :, :, ::1] xp, int kh, int kw, int sh, int sw,
           int oh, int ow):
    cdef Py_ssize_t n = xp.shape[0], c = xp.shape[3]
    cdef Py_ssize_t b, i, j, di, dj, k, row, col
    cols_arr = np.empty((n * oh * ow, kh * kw * c), dtype=np.float64)
    cdef double[:, ::1] cols = cols_arr
    row = 0
    for b in range(n):
        for i in range(oh):
            for j in range(ow):
                col = 0
                for di in range(kh):
                    for dj in range(kw):
                        for k in range(c):
                            cols[row, col] = xp[b, i * sh + di, j * sw + dj, k]
                            col += 1
                row += 1
    return cols_arr


def col2im(const double[:, ::1] dcols, int n, int hp, int wp, int c,
           int kh, int kw, int sh, int sw, int oh, int ow):
    cdef Py_ssize_t b, i, j, di, dj, k, row, col
    dx_arr = np.zeros((n, hp, wp, c), dtype=np.float64)
    cdef double[:, :, :, ::1] dx = dx_arr
    row = 0
    for b in range(n):
        for i in range(oh):
            for j in range(ow):
                col = 0
                for di in range(kh):
                    for dj in range(kw):
                        for k in range(c):
                            dx[b, i * sh + di, j * sw + dj, k] += dcols[row, col]
                            col += 1
                row += 1
    return dx_arr


def maxpool_forward(const double[:, :, :, ::1] xp, int kh, int kw, int sh, int sw,
                    int oh, int ow):
    cdef Py_ssize_t n = xp.shape[0], c = xp.shape[3]
    cdef Py_ssize_t b, i, j, di, dj, k, best_idx
    cdef double best, v
    out_arr = np.empty((n, oh, ow, c), dtype=np.float64)
    arg_arr = np.empty((n, oh, ow, c), dtype=np.int64)
    cdef double[:, :, :, ::1] out = out_arr
    cdef cnp.int64_t[:, :, :, ::1] arg = arg_arr
    for b in range(n):
        for i in range(oh):
            for j in range(ow):
                for k in range(c):
                    best = xp[b, i * sh, j * sw, k]
                    best_idx = 0
                    for di in range(kh):
                        for dj in range(kw):
                            v = xp[b, i * sh + di, j * sw + dj, k]
                            # strict > keeps the first maximum on ties
                            if v > best:
                                best = v
                                best_idx = di * kw + dj
                    out[b, i, j, k] = best
                    arg[b, i, j, k] = best_idx
    return out_arr, arg_arr


def maxpool_backward(const double[:, :, :, ::1] dout, const cnp.int64_t[:, :, :, ::1] arg,
                     int hp, int wp, int kh, int kw, int sh, int sw):
    cdef Py_ssize_t n = dout.shape[0], oh = dout.shape[1], ow = dout.shape[2]
    cdef Py_ssize_t c = dout.shape[3]
    cdef Py_ssize_t b, i, j, k, idx
    dx_arr = np.zeros((n, hp, wp, c), dtype=np.float64)
    cdef double[:, :, :, ::1] dx = dx_arr
    for b in range(n):
        for i in range(oh):
            for j in range(ow):
                for k in range(c):
                    idx = arg[b, i, j, k]
                    dx[b, i * sh + idx // kw, j * sw + idx % kw, k] += dout[b, i, j, k]
    return dx_arr


def channel_stats(const double[:, ::1] x):
    """Per-column mean and population variance of an (m, c) matrix."""
    cdef Py_ssize_t m = x.shape[0], c = x.shape[1], r, k
    mean_arr = np.zeros(c, dtype=np.float64)
    var_arr = np.zeros(c, dtype=np.float64)
    cdef double[::1] mean = mean_arr
    cdef double[::1] var = var_arr
    cdef double d
    for r in range(m):
        for k in range(c):
            mean[k] += x[r, k]
    for k in range(c):
        mean[k] /= m
    for r in range(m):
        for k in range(c):
            var[k] += x[r, k] - mean[k]
    for k in range(c):
        mean[k] += var[k] / m
        var[k] = 0.0
    for r in range(m):
        for k in range(c):
            d = x[r, k] - mean[k]
            var[k] += d * d
    for k in range(c):
        var[k] /= m
    return mean_arr, var_arr


def bn_forward(const double[:, ::1] x, const double[::1] mean, const double[::1] inv_std,
               const double[::1] gamma, const double[::1] beta, bint apply_relu):
    cdef Py_ssize_t m = x.shape[0], c = x.shape[1], r, k
    out_arr = np.empty((m, c), dtype=np.float64)
    xhat_arr = np.empty((m, c), dtype=np.float64)
    cdef double[:, ::1] out = out_arr
    cdef double[:, ::1] xhat = xhat_arr
    cdef double v
    for r in range(m):
        for k in range(c):
            v = (x[r, k] - mean[k]) * inv_std[k]
            xhat[r, k] = v
            v = gamma[k] * v + beta[k]
            if apply_relu and not v > 0:
                v = 0.0
            out[r, k] = v
    return out_arr, xhat_arr


def bn_backward(const double[:, ::1] g, const double[:, ::1] out, const double[:, ::1] xhat,
                const double[::1] gamma, const double[::1] inv_std, bint apply_relu,
                bint batch_stats):
    cdef Py_ssize_t m = g.shape[0], c = g.shape[1], r, k
    dgamma_arr = np.zeros(c, dtype=np.float64)
    dbeta_arr = np.zeros(c, dtype=np.float64)
    dx_arr = np.empty((m, c), dtype=np.float64)
    cdef double[::1] dgamma = dgamma_arr
    cdef double[::1] dbeta = dbeta_arr
    cdef double[:, ::1] dx = dx_arr
    cdef double v
    for r in range(m):
        for k in range(c):
            v = g[r, k]
            if apply_relu and not out[r, k] > 0:
                v = 0.0
            dx[r, k] = v
            dgamma[k] += v * xhat[r, k]
            dbeta[k] += v
    for r in range(m):
        for k in range(c):
            if batch_stats:
                dx[r, k] = gamma[k] * inv_std[k] * (
                    dx[r, k] - dbeta[k] / m - xhat[r, k] * dgamma[k] / m)
            else:
                dx[r, k] = gamma[k] * inv_std[k] * dx[r, k]
    return dx_arr, dgamma_arr, dbeta_arr
