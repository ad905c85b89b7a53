# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Compiled kernel primitives; same contracts as _kernels_py.

Single-threaded by design: determinism under a fixed thread count is part
of the op contract, and the surrounding GEMMs already use BLAS threads.
"""

import numpy as np

cimport cython
from libc.stdint cimport int64_t

ctypedef fused floating:
    float
    double


def pack_patches(floating[:, :, :, ::1] xp, floating[:, :, :, :, :, ::1] cols,
                 int k, int stride):
    cdef Py_ssize_t n = cols.shape[0], c = cols.shape[1]
    cdef Py_ssize_t ho = cols.shape[4], wo = cols.shape[5]
    cdef Py_ssize_t ni, ci, ki, kj, i, j
    with nogil:
        for ni in range(n):
            for ci in range(c):
                for ki in range(k):
                    for kj in range(k):
                        for i in range(ho):
                            for j in range(wo):
                                cols[ni, ci, ki, kj, i, j] = xp[ni, ci, i * stride + ki, j * stride + kj]


def unpack_patches_add(floating[:, :, :, :, :, ::1] cols, floating[:, :, :, ::1] xp,
                       int k, int stride):
    cdef Py_ssize_t n = cols.shape[0], c = cols.shape[1]
    cdef Py_ssize_t ho = cols.shape[4], wo = cols.shape[5]
    cdef Py_ssize_t ni, ci, ki, kj, i, j
    with nogil:
        for ni in range(n):
            for ci in range(c):
                for ki in range(k):
                    for kj in range(k):
                        for i in range(ho):
                            for j in range(wo):
                                xp[ni, ci, i * stride + ki, j * stride + kj] += cols[ni, ci, ki, kj, i, j]


def pool_sum(floating[:, :, :, ::1] xp, floating[:, :, :, ::1] out, int k, int stride):
    cdef Py_ssize_t n = out.shape[0], c = out.shape[1]
    cdef Py_ssize_t ho = out.shape[2], wo = out.shape[3]
    cdef Py_ssize_t ni, ci, ki, kj, i, j
    cdef floating acc
    with nogil:
        for ni in range(n):
            for ci in range(c):
                for i in range(ho):
                    for j in range(wo):
                        acc = 0
                        for ki in range(k):
                            for kj in range(k):
                                acc = acc + xp[ni, ci, i * stride + ki, j * stride + kj]
                        out[ni, ci, i, j] = acc


def pool_backward_add(floating[:, :, :, ::1] g, floating[:, :, :, ::1] gxp,
                      int k, int stride):
    cdef Py_ssize_t n = g.shape[0], c = g.shape[1]
    cdef Py_ssize_t ho = g.shape[2], wo = g.shape[3]
    cdef Py_ssize_t ni, ci, ki, kj, i, j
    cdef floating v
    with nogil:
        for ni in range(n):
            for ci in range(c):
                for i in range(ho):
                    for j in range(wo):
                        v = g[ni, ci, i, j]
                        for ki in range(k):
                            for kj in range(k):
                                gxp[ni, ci, i * stride + ki, j * stride + kj] += v


def upsample_bilinear(floating[:, :, :, ::1] x, floating[:, :, :, ::1] y,
                      int64_t[::1] hi0, int64_t[::1] hi1, double[::1] hf,
                      int64_t[::1] wi0, int64_t[::1] wi1, double[::1] wf):
    cdef Py_ssize_t n = y.shape[0], c = y.shape[1]
    cdef Py_ssize_t oh = y.shape[2], ow = y.shape[3]
    cdef Py_ssize_t ni, ci, i, j
    cdef Py_ssize_t h0, h1, w0, w1
    cdef floating fi, fj, top, bot
    with nogil:
        for ni in range(n):
            for ci in range(c):
                for i in range(oh):
                    h0 = hi0[i]; h1 = hi1[i]; fi = <floating> hf[i]
                    for j in range(ow):
                        w0 = wi0[j]; w1 = wi1[j]; fj = <floating> wf[j]
                        top = (1 - fj) * x[ni, ci, h0, w0] + fj * x[ni, ci, h0, w1]
                        bot = (1 - fj) * x[ni, ci, h1, w0] + fj * x[ni, ci, h1, w1]
                        y[ni, ci, i, j] = (1 - fi) * top + fi * bot


def upsample_bilinear_backward(floating[:, :, :, ::1] g, floating[:, :, :, ::1] gx,
                               int64_t[::1] hi0, int64_t[::1] hi1, double[::1] hf,
                               int64_t[::1] wi0, int64_t[::1] wi1, double[::1] wf):
    cdef Py_ssize_t n = g.shape[0], c = g.shape[1]
    cdef Py_ssize_t oh = g.shape[2], ow = g.shape[3]
    cdef Py_ssize_t ni, ci, i, j
    cdef Py_ssize_t h0, h1, w0, w1
    cdef floating fi, fj, v
    with nogil:
        for ni in range(n):
            for ci in range(c):
                for i in range(oh):
                    h0 = hi0[i]; h1 = hi1[i]; fi = <floating> hf[i]
                    for j in range(ow):
                        w0 = wi0[j]; w1 = wi1[j]; fj = <floating> wf[j]
                        v = g[ni, ci, i, j]
                        gx[ni, ci, h0, w0] += (1 - fi) * (1 - fj) * v
                        gx[ni, ci, h1, w0] += fi * (1 - fj) * v
                        gx[ni, ci, h0, w1] += (1 - fi) * fj * v
                        gx[ni, ci, h1, w1] += fi * fj * v
