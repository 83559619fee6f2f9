# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled convolution/pooling kernels (single-threaded, deterministic).

Drop-in counterparts of the numpy implementations in pem.model.kernels.
Loop nests keep the innermost loop contiguous over the output row so the C
compiler can vectorize; accumulation order therefore differs from the
numpy/BLAS path and float32 results may differ in the last bits.
"""

import numpy as np

ctypedef fused real:
    float
    double


cdef inline Py_ssize_t _ow_lo(Py_ssize_t pad, Py_ssize_t k, Py_ssize_t stride) nogil:
    # smallest ow with ow*stride - pad + k >= 0
    if pad <= k:
        return 0
    return (pad - k + stride - 1) // stride


cdef inline Py_ssize_t _ow_hi(Py_ssize_t W, Py_ssize_t OW, Py_ssize_t pad,
                              Py_ssize_t k, Py_ssize_t stride) nogil:
    # one past the largest ow with ow*stride - pad + k <= W-1
    cdef Py_ssize_t top = W - 1 + pad - k
    if top < 0:
        return 0
    top = top // stride + 1
    return top if top < OW else OW


def conv2d_forward(real[:, :, :, ::1] x, real[:, :, :, ::1] w, real[::1] b,
                   int stride, int pad, real[:, :, :, ::1] out):
    cdef Py_ssize_t N = x.shape[0], C = x.shape[1], H = x.shape[2], W = x.shape[3]
    cdef Py_ssize_t F = w.shape[0], KH = w.shape[2], KW = w.shape[3]
    cdef Py_ssize_t OH = out.shape[2], OW = out.shape[3]
    cdef Py_ssize_t n, f, c, oh, ow, kh, kw, ih, base, lo, hi
    cdef real wv
    with nogil:
        for n in range(N):
            for f in range(F):
                for oh in range(OH):
                    for ow in range(OW):
                        out[n, f, oh, ow] = b[f]
                for c in range(C):
                    for kh in range(KH):
                        for oh in range(OH):
                            ih = oh * stride - pad + kh
                            if ih < 0 or ih >= H:
                                continue
                            for kw in range(KW):
                                wv = w[f, c, kh, kw]
                                base = kw - pad
                                lo = _ow_lo(pad, kw, stride)
                                hi = _ow_hi(W, OW, pad, kw, stride)
                                for ow in range(lo, hi):
                                    out[n, f, oh, ow] += wv * x[n, c, ih, ow * stride + base]


def conv2d_backward(real[:, :, :, ::1] x, real[:, :, :, ::1] w, int stride, int pad,
                    real[:, :, :, ::1] dy, real[:, :, :, ::1] dx,
                    real[:, :, :, ::1] dw, real[::1] db):
    cdef Py_ssize_t N = x.shape[0], C = x.shape[1], H = x.shape[2], W = x.shape[3]
    cdef Py_ssize_t F = w.shape[0], KH = w.shape[2], KW = w.shape[3]
    cdef Py_ssize_t OH = dy.shape[2], OW = dy.shape[3]
    cdef Py_ssize_t n, f, c, oh, ow, kh, kw, ih, base, lo, hi
    cdef real wv, g
    cdef double acc
    with nogil:
        for n in range(N):
            for f in range(F):
                acc = 0.0
                for oh in range(OH):
                    for ow in range(OW):
                        acc += dy[n, f, oh, ow]
                db[f] += <real> acc
                for c in range(C):
                    for kh in range(KH):
                        for oh in range(OH):
                            ih = oh * stride - pad + kh
                            if ih < 0 or ih >= H:
                                continue
                            for kw in range(KW):
                                wv = w[f, c, kh, kw]
                                base = kw - pad
                                lo = _ow_lo(pad, kw, stride)
                                hi = _ow_hi(W, OW, pad, kw, stride)
                                acc = 0.0
                                for ow in range(lo, hi):
                                    g = dy[n, f, oh, ow]
                                    acc += g * x[n, c, ih, ow * stride + base]
                                    dx[n, c, ih, ow * stride + base] += g * wv
                                dw[f, c, kh, kw] += <real> acc


def maxpool_forward(real[:, :, :, ::1] x, int size, int stride,
                    real[:, :, :, ::1] y, long long[:, :, :, ::1] arg):
    cdef Py_ssize_t N = x.shape[0], C = x.shape[1], H = x.shape[2], W = x.shape[3]
    cdef Py_ssize_t OH = y.shape[2], OW = y.shape[3]
    cdef Py_ssize_t n, c, oh, ow, kh, kw, ih, iw, best_idx
    cdef real v, best
    with nogil:
        for n in range(N):
            for c in range(C):
                for oh in range(OH):
                    for ow in range(OW):
                        best = x[n, c, oh * stride, ow * stride]
                        best_idx = (oh * stride) * W + ow * stride
                        for kh in range(size):
                            ih = oh * stride + kh
                            for kw in range(size):
                                iw = ow * stride + kw
                                v = x[n, c, ih, iw]
                                # strict > keeps the first maximum, matching argmax
                                if v > best:
                                    best = v
                                    best_idx = ih * W + iw
                        y[n, c, oh, ow] = best
                        arg[n, c, oh, ow] = best_idx


def maxpool_backward(real[:, :, :, ::1] dy, long long[:, :, :, ::1] arg,
                     real[:, :, ::1] dx_flat):
    cdef Py_ssize_t N = dy.shape[0], C = dy.shape[1], OH = dy.shape[2], OW = dy.shape[3]
    cdef Py_ssize_t n, c, oh, ow
    with nogil:
        for n in range(N):
            for c in range(C):
                for oh in range(OH):
                    for ow in range(OW):
                        dx_flat[n, c, arg[n, c, oh, ow]] += dy[n, c, oh, ow]
