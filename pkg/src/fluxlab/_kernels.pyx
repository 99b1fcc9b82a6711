# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled versions of the hot kernels. See ``_kernels_py`` for the contracts."""

import numpy as np
cimport numpy as cnp
from libc.math cimport cos, sin, exp, expm1, fabs

cnp.import_array()

cdef double SERIES_SWITCH = 1e-4


def rank_configs(configs, const cnp.int64_t[:, :, ::1] table, long total):
    cdef const cnp.int64_t[:, ::1] c = np.ascontiguousarray(configs, dtype=np.int64)
    cdef Py_ssize_t n = c.shape[0], ns = c.shape[1], k, i
    out_arr = np.zeros(n, dtype=np.int64)
    cdef cnp.int64_t[::1] out = out_arr
    cdef cnp.int64_t rem, r
    for k in range(n):
        rem = total
        r = 0
        for i in range(ns):
            r += table[i, rem, c[k, i]]
            rem -= c[k, i]
        out[k] = r
    return out_arr


def filter_weight_matrix(evals, double alpha):
    cdef const double[::1] e = np.ascontiguousarray(evals, dtype=np.float64)
    cdef Py_ssize_t d = e.shape[0], m, n
    out_arr = np.empty((d, d), dtype=np.complex128)
    cdef double complex[:, ::1] out = out_arr
    cdef double om, x, val
    for m in range(d):
        for n in range(d):
            om = e[m] - e[n]
            x = alpha * om
            if fabs(x) < SERIES_SWITCH:
                val = alpha * x * (0.5 - x * x / 8.0)
            else:
                val = -expm1(-0.5 * x * x) / om
            out[m, n] = 1j * val
    return out_arr


def assemble_dense(rows, cols, vals, winds, angles, Py_ssize_t dim, deriv):
    cdef const cnp.int64_t[::1] r = np.ascontiguousarray(rows, dtype=np.int64)
    cdef const cnp.int64_t[::1] c = np.ascontiguousarray(cols, dtype=np.int64)
    cdef const double complex[::1] v = np.ascontiguousarray(vals, dtype=np.complex128)
    cdef const cnp.int64_t[:, ::1] w = np.ascontiguousarray(winds, dtype=np.int64)
    cdef const double[::1] a = np.ascontiguousarray(angles, dtype=np.float64)
    cdef const cnp.int64_t[::1] dv = np.ascontiguousarray(deriv, dtype=np.int64)
    cdef Py_ssize_t n = v.shape[0], na = a.shape[0], k, j, p
    out_arr = np.zeros((dim, dim), dtype=np.complex128)
    cdef double complex[:, ::1] out = out_arr
    cdef double ph, wj
    cdef double complex coef, f
    for k in range(n):
        ph = 0.0
        for j in range(na):
            ph += w[k, j] * a[j]
        coef = v[k] * (cos(ph) + 1j * sin(ph))
        for j in range(na):
            wj = w[k, j]
            for p in range(dv[j]):
                coef = coef * (1j * wj)
        out[r[k], c[k]] += coef
    return out_arr


def reduced_density(psi, inner, outer, Py_ssize_t d_in, Py_ssize_t d_out):
    cdef const double complex[::1] s = np.ascontiguousarray(psi, dtype=np.complex128)
    cdef const cnp.int64_t[::1] ii = np.ascontiguousarray(inner, dtype=np.int64)
    cdef const cnp.int64_t[::1] oo = np.ascontiguousarray(outer, dtype=np.int64)
    m_arr = np.zeros((d_in, d_out), dtype=np.complex128)
    cdef double complex[:, ::1] m = m_arr
    cdef Py_ssize_t k
    for k in range(s.shape[0]):
        m[ii[k], oo[k]] = s[k]
    return m_arr @ m_arr.conj().T
