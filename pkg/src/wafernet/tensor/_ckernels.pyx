# cython: language_level=3
"""Compiled convolution/pooling kernels (same contract as _pykernels)."""
import numpy as np
cimport numpy as cnp
from cython cimport floating

cnp.import_array()

NAME = "cython"


def im2col(floating[:, :, :, ::1] xp, int kh, int kw, int stride):
    cdef Py_ssize_t n = xp.shape[0], c = xp.shape[1]
    cdef Py_ssize_t hp = xp.shape[2], wp = xp.shape[3]
    cdef Py_ssize_t ho = (hp - kh) // stride + 1
    cdef Py_ssize_t wo = (wp - kw) // stride + 1
    cdef Py_ssize_t k = c * kh * kw
    dtype = np.float32 if floating is float else np.float64
    out = np.empty((n * ho * wo, k), dtype=dtype)
    cdef floating[:, ::1] cols = out
    cdef Py_ssize_t b, oh, ow, ch, i, j, row, col, h0, w0
    with nogil:
        for b in range(n):
            for oh in range(ho):
                h0 = oh * stride
                for ow in range(wo):
                    w0 = ow * stride
                    row = (b * ho + oh) * wo + ow
                    col = 0
                    for ch in range(c):
                        for i in range(kh):
                            for j in range(kw):
                                cols[row, col] = xp[b, ch, h0 + i, w0 + j]
                                col += 1
    return out


def col2im(floating[:, ::1] cols, tuple shape, int kh, int kw, int stride):
    cdef Py_ssize_t n = shape[0], c = shape[1], hp = shape[2], wp = shape[3]
    cdef Py_ssize_t ho = (hp - kh) // stride + 1
    cdef Py_ssize_t wo = (wp - kw) // stride + 1
    dtype = np.float32 if floating is float else np.float64
    out = np.zeros((n, c, hp, wp), dtype=dtype)
    cdef floating[:, :, :, ::1] dxp = out
    cdef Py_ssize_t b, oh, ow, ch, i, j, row, col, h0, w0
    with nogil:
        for b in range(n):
            for oh in range(ho):
                h0 = oh * stride
                for ow in range(wo):
                    w0 = ow * stride
                    row = (b * ho + oh) * wo + ow
                    col = 0
                    for ch in range(c):
                        for i in range(kh):
                            for j in range(kw):
                                dxp[b, ch, h0 + i, w0 + j] += cols[row, col]
                                col += 1
    return out


def maxpool_forward(floating[:, :, :, ::1] x, int k, int stride):
    cdef Py_ssize_t n = x.shape[0], c = x.shape[1], h = x.shape[2], w = x.shape[3]
    cdef Py_ssize_t ho = (h - k) // stride + 1
    cdef Py_ssize_t wo = (w - k) // stride + 1
    dtype = np.float32 if floating is float else np.float64
    out_arr = np.empty((n, c, ho, wo), dtype=dtype)
    idx_arr = np.empty((n, c, ho, wo), dtype=np.int64)
    cdef floating[:, :, :, ::1] out = out_arr
    cdef cnp.int64_t[:, :, :, ::1] idx = idx_arr
    cdef Py_ssize_t b, ch, oh, ow, i, j, best_i
    cdef floating best, v
    with nogil:
        for b in range(n):
            for ch in range(c):
                for oh in range(ho):
                    for ow in range(wo):
                        best = x[b, ch, oh * stride, ow * stride]
                        best_i = oh * stride * w + ow * stride
                        for i in range(k):
                            for j in range(k):
                                v = x[b, ch, oh * stride + i, ow * stride + j]
                                # strict > keeps the first row-major maximum
                                if v > best:
                                    best = v
                                    best_i = (oh * stride + i) * w + ow * stride + j
                        out[b, ch, oh, ow] = best
                        idx[b, ch, oh, ow] = best_i
    return out_arr, idx_arr


def maxpool_backward(floating[:, :, :, ::1] dout, cnp.int64_t[:, :, :, ::1] idx, tuple shape):
    cdef Py_ssize_t n = shape[0], c = shape[1], h = shape[2], w = shape[3]
    cdef Py_ssize_t ho = dout.shape[2], wo = dout.shape[3]
    dtype = np.float32 if floating is float else np.float64
    dx_arr = np.zeros((n, c, h * w), dtype=dtype)
    cdef floating[:, :, ::1] dx = dx_arr
    cdef Py_ssize_t b, ch, oh, ow
    with nogil:
        for b in range(n):
            for ch in range(c):
                for oh in range(ho):
                    for ow in range(wo):
                        dx[b, ch, idx[b, ch, oh, ow]] += dout[b, ch, oh, ow]
    return dx_arr.reshape(shape)
