# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled pairwise kernels (correlation matrices and Gaussian KDE sums).

Inner loops run contiguously over the second point set so the compiler can
vectorize the transcendental calls.
"""

import numpy as np
cimport numpy as cnp
from libc.math cimport exp, fabs, log, sqrt, M_PI

cnp.import_array()


cdef void _powexp_row(const double[:, ::1] bT, const double[::1] ai,
                      const double[::1] e, const double[::1] pw,
                      double* buf, double* orow, Py_ssize_t j0,
                      Py_ssize_t n2) noexcept nogil:
    cdef Py_ssize_t j, d, k = bT.shape[0]
    cdef double lag, ed, pd, x
    for j in range(j0, n2):
        buf[j] = 0.0
    for d in range(k):
        ed = e[d]
        pd = pw[d]
        x = ai[d]
        if pd == 1.0:
            for j in range(j0, n2):
                buf[j] += ed * fabs(x - bT[d, j])
        elif pd == 2.0:
            for j in range(j0, n2):
                lag = x - bT[d, j]
                buf[j] += ed * lag * lag
        else:
            for j in range(j0, n2):
                lag = fabs(x - bT[d, j])
                # 0 ** p == 0 for p > 0; log(0) = -inf gives exp(-inf) = 0
                buf[j] += ed * exp(pd * log(lag))
    for j in range(j0, n2):
        orow[j] = exp(-buf[j])


def powexp_cross(X1, X2, eta, p):
    a_arr = np.ascontiguousarray(X1, dtype=np.float64)
    cdef bint sym = X2 is X1
    cdef double[:, ::1] a = a_arr
    cdef double[:, ::1] bT = np.ascontiguousarray(np.asarray(X2, dtype=np.float64).T)
    cdef double[::1] e = np.ascontiguousarray(eta, dtype=np.float64)
    cdef double[::1] pw = np.ascontiguousarray(p, dtype=np.float64)
    cdef Py_ssize_t n1 = a.shape[0], n2 = bT.shape[1]
    cdef Py_ssize_t i, j
    out = np.empty((n1, n2), dtype=np.float64)
    cdef double[:, ::1] o = out
    cdef double[::1] buf = np.empty(max(n2, 1), dtype=np.float64)
    with nogil:
        for i in range(n1):
            _powexp_row(bT, a[i], e, pw, &buf[0], &o[i, 0],
                        i if sym else 0, n2)
        if sym:
            for i in range(n1):
                for j in range(i):
                    o[i, j] = o[j, i]
    return out


def matern32_cross(X1, X2, alpha):
    cdef double[:, ::1] a = np.ascontiguousarray(X1, dtype=np.float64)
    cdef double[:, ::1] bT = np.ascontiguousarray(np.asarray(X2, dtype=np.float64).T)
    cdef double[::1] al = np.ascontiguousarray(alpha, dtype=np.float64)
    cdef Py_ssize_t n1 = a.shape[0], n2 = bT.shape[1], k = a.shape[1]
    cdef Py_ssize_t i, j, d
    cdef double r, s3 = sqrt(3.0), x, sc
    out = np.empty((n1, n2), dtype=np.float64)
    cdef double[:, ::1] o = out
    with nogil:
        for i in range(n1):
            for j in range(n2):
                o[i, j] = 1.0
            for d in range(k):
                x = a[i, d]
                sc = s3 / al[d]
                for j in range(n2):
                    r = sc * fabs(x - bT[d, j])
                    o[i, j] *= (1.0 + r) * exp(-r)
    return out


def gauss_kde_eval(samples, points, h):
    cdef double[::1] bw = np.ascontiguousarray(h, dtype=np.float64)
    cdef double[:, ::1] sT = np.ascontiguousarray(
        (np.asarray(samples, dtype=np.float64) / np.asarray(bw)).T)
    cdef double[:, ::1] q = np.ascontiguousarray(
        np.asarray(points, dtype=np.float64) / np.asarray(bw))
    cdef Py_ssize_t n = sT.shape[1], nq = q.shape[0], k = sT.shape[0]
    cdef Py_ssize_t i, j, d
    cdef double acc, z, x, norm = 1.0
    for d in range(k):
        norm = norm * bw[d] * sqrt(2.0 * M_PI)
    norm = 1.0 / (n * norm)
    out = np.empty(nq, dtype=np.float64)
    cdef double[::1] o = out
    cdef double[::1] buf = np.empty(max(n, 1), dtype=np.float64)
    with nogil:
        for i in range(nq):
            for j in range(n):
                buf[j] = 0.0
            for d in range(k):
                x = q[i, d]
                for j in range(n):
                    z = x - sT[d, j]
                    buf[j] += z * z
            acc = 0.0
            for j in range(n):
                acc += exp(-0.5 * buf[j])
            o[i] = acc * norm
    return out
