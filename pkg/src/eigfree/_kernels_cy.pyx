# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled numeric hot kernels.

Same three kernels as ``_kernels_py`` with identical sweep ordering and
convergence rules; see that module for the contracts.
"""

import numpy as np

cimport numpy as cnp
from libc.math cimport fabs, sqrt

cnp.import_array()

BACKEND_NAME = "compiled"

DEF EIG_SWEEP_CAP = 64
DEF SVD_SWEEP_CAP = 64
cdef double EIG_OFFDIAG_REL_TOL = 1e-14
cdef double SVD_ORTHO_REL_TOL = 1e-15


def jacobi_eigh(s):
    a_arr = np.array(s, dtype=np.float64, copy=True, order="C")
    cdef Py_ssize_t d = a_arr.shape[0]
    v_arr = np.eye(d, dtype=np.float64)
    cdef double[:, ::1] a = a_arr
    cdef double[:, ::1] v = v_arr
    cdef Py_ssize_t p, q, k, sweep
    cdef double fnorm = 0.0, apq, theta, t, c, sn, akp, akq
    cdef bint rotated

    if d == 1:
        return np.array([a_arr[0, 0]]), v_arr
    for p in range(d):
        for q in range(d):
            fnorm += a[p, q] * a[p, q]
    fnorm = sqrt(fnorm)
    if fnorm == 0.0:
        return np.zeros(d), v_arr
    cdef double thresh = EIG_OFFDIAG_REL_TOL * fnorm

    for sweep in range(EIG_SWEEP_CAP):
        rotated = False
        for p in range(d - 1):
            for q in range(p + 1, d):
                apq = a[p, q]
                if fabs(apq) <= thresh:
                    continue
                rotated = True
                theta = (a[q, q] - a[p, p]) / (2.0 * apq)
                t = 1.0 / (fabs(theta) + sqrt(theta * theta + 1.0))
                if theta < 0.0:
                    t = -t
                c = 1.0 / sqrt(t * t + 1.0)
                sn = t * c
                for k in range(d):
                    akp = a[k, p]
                    akq = a[k, q]
                    a[k, p] = c * akp - sn * akq
                    a[k, q] = sn * akp + c * akq
                for k in range(d):
                    akp = a[p, k]
                    akq = a[q, k]
                    a[p, k] = c * akp - sn * akq
                    a[q, k] = sn * akp + c * akq
                a[p, q] = 0.0
                a[q, p] = 0.0
                for k in range(d):
                    akp = v[k, p]
                    akq = v[k, q]
                    v[k, p] = c * akp - sn * akq
                    v[k, q] = sn * akp + c * akq
        if not rotated:
            break
    return np.diag(a_arr).copy(), v_arr


def jacobi_svd(a):
    w_arr = np.array(a, dtype=np.float64, copy=True, order="C")
    cdef Py_ssize_t m = w_arr.shape[0]
    cdef Py_ssize_t n = w_arr.shape[1]
    v_arr = np.eye(n, dtype=np.float64)
    cdef double[:, ::1] w = w_arr
    cdef double[:, ::1] v = v_arr
    cdef Py_ssize_t p, q, k, sweep
    cdef double alpha, beta, gamma, zeta, t, c, sn, wkp, wkq
    cdef bint rotated

    if n == 1:
        return w_arr, v_arr
    for sweep in range(SVD_SWEEP_CAP):
        rotated = False
        for p in range(n - 1):
            for q in range(p + 1, n):
                alpha = 0.0
                beta = 0.0
                gamma = 0.0
                for k in range(m):
                    alpha += w[k, p] * w[k, p]
                    beta += w[k, q] * w[k, q]
                    gamma += w[k, p] * w[k, q]
                if alpha == 0.0 or beta == 0.0:
                    continue
                if fabs(gamma) <= SVD_ORTHO_REL_TOL * sqrt(alpha * beta):
                    continue
                rotated = True
                zeta = (beta - alpha) / (2.0 * gamma)
                t = 1.0 / (fabs(zeta) + sqrt(zeta * zeta + 1.0))
                if zeta < 0.0:
                    t = -t
                c = 1.0 / sqrt(t * t + 1.0)
                sn = c * t
                for k in range(m):
                    wkp = w[k, p]
                    wkq = w[k, q]
                    w[k, p] = c * wkp - sn * wkq
                    w[k, q] = sn * wkp + c * wkq
                for k in range(n):
                    wkp = v[k, p]
                    wkq = v[k, q]
                    v[k, p] = c * wkp - sn * wkq
                    v[k, q] = sn * wkp + c * wkq
        if not rotated:
            break
    return w_arr, v_arr


def weighted_terms(x, e, w):
    x_arr = np.ascontiguousarray(x, dtype=np.float64)
    e_arr = np.ascontiguousarray(e, dtype=np.float64)
    w_arr = np.ascontiguousarray(w, dtype=np.float64)
    cdef Py_ssize_t n = x_arr.shape[0]
    cdef Py_ssize_t d = x_arr.shape[1]
    r_arr = np.empty(n, dtype=np.float64)
    rowsq_arr = np.empty(n, dtype=np.float64)
    cdef double[:, ::1] xv = x_arr
    cdef double[::1] ev = e_arr
    cdef double[::1] wv = w_arr
    cdef double[::1] rv = r_arr
    cdef double[::1] sv = rowsq_arr
    cdef Py_ssize_t i, j
    cdef double ri, diff, acc, eig = 0.0, tr = 0.0

    for i in range(n):
        ri = 0.0
        for j in range(d):
            ri += xv[i, j] * ev[j]
        rv[i] = ri
        acc = 0.0
        for j in range(d):
            diff = xv[i, j] - ri * ev[j]
            acc += diff * diff
        sv[i] = acc
        eig += wv[i] * ri * ri
        tr += wv[i] * acc
    return eig, tr, r_arr, rowsq_arr
