# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled lane for the hot numeric kernels.

Same contracts as numpy_impl; selection scores are computed from single-pass
column accumulators instead of whole-matrix temporaries.
"""

import numpy as np

cimport numpy as cnp
from libc.math cimport erfc, log, log1p, sqrt

cnp.import_array()

PROB_EPS = 1e-12

BACKEND_NAME = "cython"

cdef double _EPS = 1e-12
cdef double _INV_SQRT2 = 1.0 / sqrt(2.0)


cdef inline double _phi_clamped(double z) nogil:
    cdef double p = 0.5 * erfc(-z * _INV_SQRT2)
    if p < _EPS:
        return _EPS
    if p > 1.0 - _EPS:
        return 1.0 - _EPS
    return p


def norm_cdf(x):
    cdef cnp.ndarray[cnp.float64_t, ndim=1] flat = np.ascontiguousarray(x, dtype=np.float64).ravel()
    cdef cnp.ndarray[cnp.float64_t, ndim=1] out = np.empty_like(flat)
    cdef Py_ssize_t i, n = flat.shape[0]
    for i in range(n):
        out[i] = 0.5 * erfc(-flat[i] * _INV_SQRT2)
    return out.reshape(np.shape(x))


def clamp_prob(p):
    return np.clip(p, PROB_EPS, 1.0 - PROB_EPS)


def probit_clamped(z):
    cdef cnp.ndarray[cnp.float64_t, ndim=1] flat = np.ascontiguousarray(z, dtype=np.float64).ravel()
    cdef cnp.ndarray[cnp.float64_t, ndim=1] out = np.empty_like(flat)
    cdef Py_ssize_t i, n = flat.shape[0]
    for i in range(n):
        out[i] = _phi_clamped(flat[i])
    return out.reshape(np.shape(z))


def predictive_matrix(theta, loadings, intercepts):
    z = np.asarray(theta, dtype=np.float64) @ np.asarray(loadings, dtype=np.float64).T
    z += np.asarray(intercepts, dtype=np.float64)[None, :]
    return probit_clamped(z)


cdef void _column_sums(double[:, ::1] p,
                       double[::1] sp, double[::1] spp,
                       double[::1] slp, double[::1] slq,
                       double[::1] spl, double[::1] sql) nogil:
    # sp:  sum P          spp: sum P^2
    # slp: sum log P      slq: sum log(1-P)
    # spl: sum P log P    sql: sum (1-P) log(1-P)
    cdef Py_ssize_t i, j, m = p.shape[0], n = p.shape[1]
    cdef double v, lp, lq
    for j in range(n):
        sp[j] = 0.0
        spp[j] = 0.0
        slp[j] = 0.0
        slq[j] = 0.0
        spl[j] = 0.0
        sql[j] = 0.0
    for i in range(m):
        for j in range(n):
            v = p[i, j]
            lp = log(v)
            lq = log1p(-v)
            sp[j] += v
            spp[j] += v * v
            slp[j] += lp
            slq[j] += lq
            spl[j] += v * lp
            sql[j] += (1.0 - v) * lq


cdef tuple _stats(object p):
    cdef cnp.ndarray[cnp.float64_t, ndim=2] pc = np.ascontiguousarray(p, dtype=np.float64)
    cdef Py_ssize_t n = pc.shape[1]
    sp = np.empty(n)
    spp = np.empty(n)
    slp = np.empty(n)
    slq = np.empty(n)
    spl = np.empty(n)
    sql = np.empty(n)
    _column_sums(pc, sp, spp, slp, slq, spl, sql)
    return pc.shape[0], sp, spp, slp, slq, spl, sql


def eap_kl_scores(p, p_hat):
    m, sp, spp, slp, slq, spl, sql = _stats(p)
    ph = np.clip(np.asarray(p_hat, dtype=np.float64), PROB_EPS, 1.0 - PROB_EPS)
    return ph * (np.log(ph) - slp / m) + (1.0 - ph) * (np.log1p(-ph) - slq / m)


def max_pos_scores(p):
    m, sp, spp, slp, slq, spl, sql = _stats(p)
    c = np.clip(sp / m, PROB_EPS, 1.0 - PROB_EPS)
    return c * (np.log(c) - slp / m) + (1.0 - c) * (np.log1p(-c) - slq / m)


def mi_scores_weighted(p):
    m, sp, spp, slp, slq, spl, sql = _stats(p)
    c = np.clip(sp / m, PROB_EPS, 1.0 - PROB_EPS)
    s0 = m - sp
    inner1 = np.where(sp > 0.0, spl / np.where(sp > 0.0, sp, 1.0) - np.log(c), 0.0)
    inner0 = np.where(s0 > 0.0, sql / np.where(s0 > 0.0, s0, 1.0) - np.log1p(-c), 0.0)
    return c * inner1 + (1.0 - c) * inner0


def mi_scores_pooled(p):
    m, sp, spp, slp, slq, spl, sql = _stats(p)
    c = np.clip(sp / m, PROB_EPS, 1.0 - PROB_EPS)
    return (spl - sp * np.log(c) + sql - (m - sp) * np.log1p(-c)) / m


def max_var_scores(p):
    m, sp, spp, slp, slq, spl, sql = _stats(p)
    c = sp / m
    return spp / m - c * c
