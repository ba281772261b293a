# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled twins of the kernels in ``_pykernels``."""

import numpy as np
cimport numpy as cnp
from libc.math cimport exp, log, sqrt, fabs
from libc.stdint cimport uint64_t, int64_t

cnp.import_array()


cdef inline uint64_t _mix(uint64_t z) nogil:
    z = z + <uint64_t>0x9E3779B97F4A7C15ULL
    z = (z ^ (z >> 30)) * <uint64_t>0xBF58476D1CE4E5B9ULL
    z = (z ^ (z >> 27)) * <uint64_t>0x94D049BB133111EBULL
    return z ^ (z >> 31)


def counter_uniforms(seed, markets, period, stream):
    cdef const int64_t[::1] m = np.ascontiguousarray(markets, dtype=np.int64).ravel()
    cdef Py_ssize_t n = m.shape[0], i
    out_arr = np.empty(n, dtype=np.float64)
    cdef double[::1] out = out_arr
    cdef uint64_t s = <uint64_t>int(seed), p = <uint64_t>int(period), st = <uint64_t>int(stream)
    cdef uint64_t h0 = _mix(s), h
    with nogil:
        for i in range(n):
            h = _mix(h0 ^ <uint64_t>m[i])
            h = _mix(h ^ p)
            h = _mix(h ^ st)
            out[i] = <double>(h >> 11) * (1.0 / 9007199254740992.0)
    return out_arr.reshape(np.shape(markets))


def draw_categorical(cdf, u):
    cdef const double[:, ::1] c = np.ascontiguousarray(cdf, dtype=np.float64)
    cdef const double[::1] uu = np.ascontiguousarray(u, dtype=np.float64)
    cdef Py_ssize_t n = c.shape[0], k = c.shape[1], i, j
    cdef int64_t idx
    out_arr = np.empty(n, dtype=np.int64)
    cdef int64_t[::1] out = out_arr
    with nogil:
        for i in range(n):
            idx = 0
            for j in range(k - 1):
                if uu[i] >= c[i, j]:
                    idx += 1
            out[i] = idx
    return out_arr


def softmax_rows(v, double floor):
    cdef const double[:, ::1] x = np.ascontiguousarray(v, dtype=np.float64)
    cdef Py_ssize_t n = x.shape[0], k = x.shape[1], i, j
    out_arr = np.empty((n, k), dtype=np.float64)
    cdef double[:, ::1] out = out_arr
    cdef double mx, s, t
    with nogil:
        for i in range(n):
            mx = x[i, 0]
            for j in range(1, k):
                if x[i, j] > mx:
                    mx = x[i, j]
            s = 0.0
            for j in range(k):
                t = exp(x[i, j] - mx)
                out[i, j] = t
                s += t
            for j in range(k):
                out[i, j] /= s
            if floor > 0.0:
                s = 0.0
                for j in range(k):
                    if out[i, j] < floor:
                        out[i, j] = floor
                    s += out[i, j]
                for j in range(k):
                    out[i, j] /= s
    return out_arr


def logsumexp_rows(v):
    cdef const double[:, ::1] x = np.ascontiguousarray(v, dtype=np.float64)
    cdef Py_ssize_t n = x.shape[0], k = x.shape[1], i, j
    out_arr = np.empty(n, dtype=np.float64)
    cdef double[::1] out = out_arr
    cdef double mx, s
    with nogil:
        for i in range(n):
            mx = x[i, 0]
            for j in range(1, k):
                if x[i, j] > mx:
                    mx = x[i, j]
            s = 0.0
            for j in range(k):
                s += exp(x[i, j] - mx)
            out[i] = mx + log(s)
    return out_arr


def givens_step(double[:, :, ::1] H, double[:, ::1] cs, double[:, ::1] sn,
                double[:, ::1] g, Py_ssize_t j, cols):
    cdef const int64_t[::1] cc = np.ascontiguousarray(cols, dtype=np.int64)
    cdef Py_ssize_t n = cc.shape[0], t, i, c
    out_arr = np.empty(n, dtype=np.float64)
    cdef double[::1] out = out_arr
    cdef double a, b, r, tmp
    with nogil:
        for t in range(n):
            c = cc[t]
            for i in range(j):
                tmp = cs[c, i] * H[c, i, j] + sn[c, i] * H[c, i + 1, j]
                H[c, i + 1, j] = -sn[c, i] * H[c, i, j] + cs[c, i] * H[c, i + 1, j]
                H[c, i, j] = tmp
            a = H[c, j, j]
            b = H[c, j + 1, j]
            r = _hypot(a, b)
            if r == 0.0:
                cs[c, j] = 1.0
                sn[c, j] = 0.0
            else:
                cs[c, j] = a / r
                sn[c, j] = b / r
            H[c, j, j] = r
            H[c, j + 1, j] = 0.0
            g[c, j + 1] = -sn[c, j] * g[c, j]
            g[c, j] = cs[c, j] * g[c, j]
            out[t] = fabs(g[c, j + 1])
    return out_arr


cdef inline double _hypot(double a, double b) nogil:
    cdef double x = fabs(a), y = fabs(b), t
    if x < y:
        t = x
        x = y
        y = t
    if x == 0.0:
        return 0.0
    t = y / x
    return x * sqrt(1.0 + t * t)
