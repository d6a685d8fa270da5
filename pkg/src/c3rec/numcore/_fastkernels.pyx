# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Fused float64 kernels for the encoder hot path.

Mirrors kernels_np.py: row softmax and layer norm, forwards and backwards,
on 2-D C-contiguous arrays. Single-pass loops avoid the temporaries the
NumPy versions allocate per row, which matters at the short row lengths
(group size + 1) this model runs at.
"""

import numpy as np

cimport numpy as cnp
from libc.math cimport exp, sqrt

cnp.import_array()

BACKEND_NAME = "cython"


def softmax_rows_fwd(double[:, ::1] x not None):
    cdef Py_ssize_t r = x.shape[0], c = x.shape[1]
    out = np.empty((r, c), dtype=np.float64)
    cdef double[:, ::1] y = out
    cdef Py_ssize_t i, j
    cdef double m, s
    for i in range(r):
        m = x[i, 0]
        for j in range(1, c):
            if x[i, j] > m:
                m = x[i, j]
        s = 0.0
        for j in range(c):
            y[i, j] = exp(x[i, j] - m)
            s += y[i, j]
        for j in range(c):
            y[i, j] /= s
    return out


def softmax_rows_bwd(double[:, ::1] y not None, double[:, ::1] dy not None):
    cdef Py_ssize_t r = y.shape[0], c = y.shape[1]
    out = np.empty((r, c), dtype=np.float64)
    cdef double[:, ::1] dx = out
    cdef Py_ssize_t i, j
    cdef double dot
    for i in range(r):
        dot = 0.0
        for j in range(c):
            dot += dy[i, j] * y[i, j]
        for j in range(c):
            dx[i, j] = y[i, j] * (dy[i, j] - dot)
    return out


def attn_fwd(double[:, :, :, ::1] q not None, double[:, :, :, ::1] k not None,
             double[:, :, :, ::1] v not None, double[:, ::1] key_bias not None,
             double scale):
    cdef Py_ssize_t nb = q.shape[0], nh = q.shape[1], nt = q.shape[2], nk = q.shape[3]
    ctx_out = np.empty((nb, nh, nt, nk), dtype=np.float64)
    probs_out = np.empty((nb, nh, nt, nt), dtype=np.float64)
    cdef double[:, :, :, ::1] ctx = ctx_out, probs = probs_out
    cdef Py_ssize_t b, h, i, j, c
    cdef double m, s, acc
    for b in range(nb):
        for h in range(nh):
            for i in range(nt):
                for j in range(nt):
                    acc = 0.0
                    for c in range(nk):
                        acc += q[b, h, i, c] * k[b, h, j, c]
                    probs[b, h, i, j] = acc * scale + key_bias[b, j]
                m = probs[b, h, i, 0]
                for j in range(1, nt):
                    if probs[b, h, i, j] > m:
                        m = probs[b, h, i, j]
                s = 0.0
                for j in range(nt):
                    probs[b, h, i, j] = exp(probs[b, h, i, j] - m)
                    s += probs[b, h, i, j]
                for j in range(nt):
                    probs[b, h, i, j] /= s
                for c in range(nk):
                    acc = 0.0
                    for j in range(nt):
                        acc += probs[b, h, i, j] * v[b, h, j, c]
                    ctx[b, h, i, c] = acc
    return ctx_out, probs_out


def attn_bwd(double[:, :, :, ::1] dctx not None, double[:, :, :, ::1] probs not None,
             double[:, :, :, ::1] q not None, double[:, :, :, ::1] k not None,
             double[:, :, :, ::1] v not None, double scale):
    cdef Py_ssize_t nb = q.shape[0], nh = q.shape[1], nt = q.shape[2], nk = q.shape[3]
    dq_out = np.zeros((nb, nh, nt, nk), dtype=np.float64)
    dk_out = np.zeros((nb, nh, nt, nk), dtype=np.float64)
    dv_out = np.zeros((nb, nh, nt, nk), dtype=np.float64)
    dl_out = np.empty(nt, dtype=np.float64)
    cdef double[:, :, :, ::1] dq = dq_out, dk = dk_out, dv = dv_out
    cdef double[::1] dl = dl_out
    cdef Py_ssize_t b, h, i, j, c
    cdef double acc, dot, g
    for b in range(nb):
        for h in range(nh):
            for i in range(nt):
                # dprobs row, then dlogits row via the softmax jacobian
                dot = 0.0
                for j in range(nt):
                    acc = 0.0
                    for c in range(nk):
                        acc += dctx[b, h, i, c] * v[b, h, j, c]
                    dl[j] = acc
                    dot += acc * probs[b, h, i, j]
                for j in range(nt):
                    dl[j] = probs[b, h, i, j] * (dl[j] - dot)
                for j in range(nt):
                    g = dl[j] * scale
                    for c in range(nk):
                        dq[b, h, i, c] += g * k[b, h, j, c]
                        dk[b, h, j, c] += g * q[b, h, i, c]
                for j in range(nt):
                    g = probs[b, h, i, j]
                    for c in range(nk):
                        dv[b, h, j, c] += g * dctx[b, h, i, c]
    return dq_out, dk_out, dv_out


def layer_norm_fwd(double[:, ::1] x not None, double[::1] gain not None,
                   double[::1] bias not None, double eps):
    cdef Py_ssize_t r = x.shape[0], c = x.shape[1]
    out = np.empty((r, c), dtype=np.float64)
    mean_out = np.empty(r, dtype=np.float64)
    rstd_out = np.empty(r, dtype=np.float64)
    cdef double[:, ::1] y = out
    cdef double[::1] mean = mean_out, rstd = rstd_out
    cdef Py_ssize_t i, j
    cdef double mu, var, d, rs
    for i in range(r):
        mu = 0.0
        for j in range(c):
            mu += x[i, j]
        mu /= c
        var = 0.0
        for j in range(c):
            d = x[i, j] - mu
            var += d * d
        var /= c
        rs = 1.0 / sqrt(var + eps)
        mean[i] = mu
        rstd[i] = rs
        for j in range(c):
            y[i, j] = (x[i, j] - mu) * rs * gain[j] + bias[j]
    return out, mean_out, rstd_out


def layer_norm_bwd(double[:, ::1] dy not None, double[:, ::1] x not None,
                   double[::1] gain not None, double[::1] mean not None,
                   double[::1] rstd not None):
    cdef Py_ssize_t r = x.shape[0], c = x.shape[1]
    dx_out = np.empty((r, c), dtype=np.float64)
    dgain_out = np.zeros(c, dtype=np.float64)
    dbias_out = np.zeros(c, dtype=np.float64)
    cdef double[:, ::1] dx = dx_out
    cdef double[::1] dgain = dgain_out, dbias = dbias_out
    cdef Py_ssize_t i, j
    cdef double mu, rs, xhat, dxh, s1, s2
    for i in range(r):
        mu = mean[i]
        rs = rstd[i]
        s1 = 0.0
        s2 = 0.0
        for j in range(c):
            xhat = (x[i, j] - mu) * rs
            dxh = dy[i, j] * gain[j]
            dgain[j] += dy[i, j] * xhat
            dbias[j] += dy[i, j]
            s1 += dxh
            s2 += dxh * xhat
        for j in range(c):
            xhat = (x[i, j] - mu) * rs
            dxh = dy[i, j] * gain[j]
            dx[i, j] = rs / c * (c * dxh - s1 - xhat * s2)
    return dx_out, dgain_out, dbias_out
