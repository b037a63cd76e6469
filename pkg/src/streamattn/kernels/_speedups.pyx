# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""C implementations of the decode-time kernels.

Same numerics contract as kernels._ref: all accumulation in double,
cast to the input dtype on store.
"""

import numpy as np

cimport numpy as cnp
from libc.math cimport INFINITY, cos, exp, sin

ctypedef fused floating:
    float
    double


def rotate(floating[:, :, ::1] x, double[::1] positions, double[::1] thetas):
    cdef Py_ssize_t n = x.shape[0]
    cdef Py_ssize_t heads = x.shape[1]
    cdef Py_ssize_t lanes = x.shape[2] // 2
    out_np = np.empty_like(np.asarray(x))
    cdef floating[:, :, ::1] out = out_np
    cdef Py_ssize_t i, h, l
    cdef double a, c, s, ev, od
    for i in range(n):
        for l in range(lanes):
            a = positions[i] * thetas[l]
            c = cos(a)
            s = sin(a)
            for h in range(heads):
                ev = x[i, h, 2 * l]
                od = x[i, h, 2 * l + 1]
                out[i, h, 2 * l] = <floating> (ev * c - od * s)
                out[i, h, 2 * l + 1] = <floating> (ev * s + od * c)
    return out_np


def attend(floating[:, ::1] q, floating[:, :, ::1] keys, floating[:, :, ::1] values,
           double scale):
    cdef Py_ssize_t heads = q.shape[0]
    cdef Py_ssize_t d = q.shape[1]
    cdef Py_ssize_t n = keys.shape[0]
    if n == 0:
        raise ValueError("attend needs at least one key")
    out_np = np.empty((heads, d), dtype=np.asarray(q).dtype)
    cdef floating[:, ::1] out = out_np
    cdef double[::1] w = np.empty(n, dtype=np.float64)
    cdef Py_ssize_t h, i, j
    cdef double acc, best, denom
    for h in range(heads):
        best = -INFINITY
        for i in range(n):
            acc = 0.0
            for j in range(d):
                acc += (<double> q[h, j]) * (<double> keys[i, h, j])
            acc *= scale
            w[i] = acc
            if acc > best:
                best = acc
        denom = 0.0
        for i in range(n):
            w[i] = exp(w[i] - best)
            denom += w[i]
        for j in range(d):
            acc = 0.0
            for i in range(n):
                acc += w[i] * (<double> values[i, h, j])
            out[h, j] = <floating> (acc / denom)
    return out_np
