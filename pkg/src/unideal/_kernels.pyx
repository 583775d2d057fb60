# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled per-batch kernels. Semantics match ``_kernels_py`` exactly."""

import numpy as np
cimport numpy as cnp
from libc.math cimport exp, log, sqrt, fabs

cnp.import_array()

cdef double KL_FLOOR = 1e-12
cdef double NORM_FLOOR = 1e-12

COSINE = 0
INV_L1 = 1
INV_L2 = 2


cdef void _softmax_row(const double[:, ::1] z, Py_ssize_t i, double[:, ::1] out) noexcept nogil:
    cdef Py_ssize_t j, c = z.shape[1]
    cdef double m = z[i, 0], total = 0.0
    for j in range(1, c):
        if z[i, j] > m:
            m = z[i, j]
    for j in range(c):
        out[i, j] = exp(z[i, j] - m)
        total += out[i, j]
    for j in range(c):
        out[i, j] /= total


def softmax_rows(const double[:, ::1] z):
    cdef Py_ssize_t i, n = z.shape[0]
    out = np.empty((z.shape[0], z.shape[1]), dtype=np.float64)
    cdef double[:, ::1] o = out
    with nogil:
        for i in range(n):
            _softmax_row(z, i, o)
    return out


cdef double _kl_row(const double[:, ::1] p, const double[:, ::1] q, Py_ssize_t i) noexcept nogil:
    cdef Py_ssize_t j
    cdef double acc = 0.0, qj
    for j in range(p.shape[1]):
        if p[i, j] > 0.0:
            qj = q[i, j]
            if qj < KL_FLOOR:
                qj = KL_FLOOR
            acc += p[i, j] * (log(p[i, j]) - log(qj))
    return acc


def row_kl(const double[:, ::1] p, const double[:, ::1] q):
    cdef Py_ssize_t i, n = p.shape[0]
    out = np.empty(n, dtype=np.float64)
    cdef double[::1] o = out
    with nogil:
        for i in range(n):
            o[i] = _kl_row(p, q, i)
    return out


def cross_entropy(const double[:, ::1] z, const cnp.int64_t[::1] labels):
    cdef Py_ssize_t i, j, n = z.shape[0], c = z.shape[1]
    cdef double m, total, loss = 0.0
    grad = np.empty((n, c), dtype=np.float64)
    cdef double[:, ::1] g = grad
    with nogil:
        for i in range(n):
            m = z[i, 0]
            for j in range(1, c):
                if z[i, j] > m:
                    m = z[i, j]
            total = 0.0
            for j in range(c):
                g[i, j] = exp(z[i, j] - m)
                total += g[i, j]
            loss += log(total) - (z[i, labels[i]] - m)
            for j in range(c):
                g[i, j] = g[i, j] / total
            g[i, labels[i]] -= 1.0
            for j in range(c):
                g[i, j] /= n
    return loss / n, grad


def mutual_scores(const double[:, ::1] t, const double[:, ::1] s, int kind, double eps):
    cdef Py_ssize_t i, j, n = t.shape[0], c = t.shape[1]
    cdef double a, b, d, nt, ns, dot
    out = np.empty(n, dtype=np.float64)
    cdef double[::1] o = out
    with nogil:
        for i in range(n):
            if kind == 0:
                nt = 0.0
                ns = 0.0
                dot = 0.0
                for j in range(c):
                    a = t[i, j]
                    b = s[i, j]
                    nt += a * a
                    ns += b * b
                    dot += a * b
                nt = sqrt(nt)
                ns = sqrt(ns)
                if nt < NORM_FLOOR or ns < NORM_FLOOR:
                    o[i] = 0.0
                else:
                    o[i] = dot / (nt * ns)
            elif kind == 1:
                d = 0.0
                for j in range(c):
                    d += fabs(t[i, j] - s[i, j])
                o[i] = 1.0 / (d + eps)
            else:
                d = 0.0
                for j in range(c):
                    a = t[i, j] - s[i, j]
                    d += a * a
                o[i] = 1.0 / (sqrt(d) + eps)
    return out


def masked_kl(const double[:, ::1] t, const double[:, ::1] s, mask):
    cdef const cnp.uint8_t[::1] keep = np.ascontiguousarray(mask, dtype=np.uint8)
    cdef Py_ssize_t i, j, n = t.shape[0], c = t.shape[1]
    cdef double loss = 0.0
    pt_arr = np.empty((n, c), dtype=np.float64)
    ps_arr = np.empty((n, c), dtype=np.float64)
    grad = np.zeros((n, c), dtype=np.float64)
    cdef double[:, ::1] pt = pt_arr
    cdef double[:, ::1] ps = ps_arr
    cdef double[:, ::1] g = grad
    with nogil:
        for i in range(n):
            if not keep[i]:
                continue
            _softmax_row(t, i, pt)
            _softmax_row(s, i, ps)
            loss += _kl_row(pt, ps, i)
            for j in range(c):
                g[i, j] = ps[i, j] - pt[i, j]
    return loss, grad
