# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
import numpy as np

from libc.math cimport exp


def cov_cross(const double[::1] a1, const double[::1] t1, const Py_ssize_t[::1] p1,
              const double[::1] a2, const double[::1] t2, const Py_ssize_t[::1] p2,
              double inv_la, double inv_lt, const double[:, ::1] P):
    cdef Py_ssize_t n1 = a1.shape[0], n2 = a2.shape[0], i, j
    cdef double da, dt, ha = -0.5 * inv_la, ht = -0.5 * inv_lt
    out = np.empty((n1, n2), dtype=np.float64)
    cdef double[:, ::1] o = out
    with nogil:
        for i in range(n1):
            for j in range(n2):
                da = a1[i] - a2[j]
                dt = t1[i] - t2[j]
                o[i, j] = P[p1[i], p2[j]] * exp(da * da * ha + dt * dt * ht)
    return out


def cov_sym(const double[::1] a, const double[::1] t, const Py_ssize_t[::1] p,
            double inv_la, double inv_lt, const double[:, ::1] P):
    cdef Py_ssize_t n = a.shape[0], i, j
    cdef double da, dt, v, ha = -0.5 * inv_la, ht = -0.5 * inv_lt
    out = np.empty((n, n), dtype=np.float64)
    cdef double[:, ::1] o = out
    with nogil:
        for i in range(n):
            for j in range(i + 1):
                da = a[i] - a[j]
                dt = t[i] - t[j]
                v = P[p[i], p[j]] * exp(da * da * ha + dt * dt * ht)
                o[i, j] = v
                o[j, i] = v
    return out
