"""NumPy implementations of the numeric hot kernels.

This module is the fallback backend; ``_kernels_cy`` implements the same
three kernels (identical sweep and rotation ordering) in C via Cython.
Shared post-processing (sorting, sign conventions, basis completion) lives
in :mod:`eigfree.linalg`, so the kernels only do the O(sweeps) work.
"""

import numpy as np

BACKEND_NAME = "python"

# Convergence constants shared by both backends.
EIG_SWEEP_CAP = 64
EIG_OFFDIAG_REL_TOL = 1e-14   # relative to ||S||_F
SVD_SWEEP_CAP = 64
SVD_ORTHO_REL_TOL = 1e-15     # |x.y| relative to ||x|| ||y||


def jacobi_eigh(s):
    """Cyclic Jacobi eigendecomposition of a symmetric float64 matrix.

    Sweeps row-major over the strict upper triangle, skipping rotations
    whose pivot is already below ``1e-14 * ||S||_F``; stops when a full
    sweep performs no rotation or after 64 sweeps.

    Returns ``(values, vectors)`` unsorted; column ``k`` of ``vectors``
    pairs with ``values[k]``.
    """
    a = np.array(s, dtype=np.float64, copy=True)
    d = a.shape[0]
    v = np.eye(d, dtype=np.float64)
    if d == 1:
        return np.array([a[0, 0]]), v
    fnorm = float(np.sqrt((a * a).sum()))
    if fnorm == 0.0:
        return np.zeros(d), v
    thresh = EIG_OFFDIAG_REL_TOL * fnorm
    for _ in range(EIG_SWEEP_CAP):
        rotated = False
        for p in range(d - 1):
            for q in range(p + 1, d):
                apq = a[p, q]
                if abs(apq) <= thresh:
                    continue
                rotated = True
                theta = (a[q, q] - a[p, p]) / (2.0 * apq)
                t = 1.0 / (abs(theta) + np.sqrt(theta * theta + 1.0))
                if theta < 0.0:
                    t = -t
                c = 1.0 / np.sqrt(t * t + 1.0)
                sn = t * c
                _rotate_pair(a, v, p, q, c, sn)
        if not rotated:
            break
    return np.diag(a).copy(), v


def _rotate_pair(a, v, p, q, c, sn):
    # Two-sided rotation of the working matrix plus accumulation into v.
    ap = a[:, p].copy()
    aq = a[:, q].copy()
    a[:, p] = c * ap - sn * aq
    a[:, q] = sn * ap + c * aq
    ap = a[p, :].copy()
    aq = a[q, :].copy()
    a[p, :] = c * ap - sn * aq
    a[q, :] = sn * ap + c * aq
    # The pivot is annihilated exactly by construction.
    a[p, q] = 0.0
    a[q, p] = 0.0
    vp = v[:, p].copy()
    vq = v[:, q].copy()
    v[:, p] = c * vp - sn * vq
    v[:, q] = sn * vp + c * vq


def jacobi_svd(a):
    """One-sided Jacobi orthogonalization of the columns of ``a``.

    Returns ``(w, v)`` with ``w = a @ v`` and the columns of ``w``
    mutually orthogonal; singular values are the column norms of ``w``.
    Column pairs are visited cyclically until every pair satisfies
    ``|w_p . w_q| <= 1e-15 * ||w_p|| ||w_q||`` (or 64 sweeps).
    """
    w = np.array(a, dtype=np.float64, copy=True)
    n = w.shape[1]
    v = np.eye(n, dtype=np.float64)
    if n == 1:
        return w, v
    for _ in range(SVD_SWEEP_CAP):
        rotated = False
        for p in range(n - 1):
            for q in range(p + 1, n):
                wp = w[:, p]
                wq = w[:, q]
                alpha = float(wp @ wp)
                beta = float(wq @ wq)
                gamma = float(wp @ wq)
                if alpha == 0.0 or beta == 0.0:
                    continue
                if abs(gamma) <= SVD_ORTHO_REL_TOL * np.sqrt(alpha * beta):
                    continue
                rotated = True
                zeta = (beta - alpha) / (2.0 * gamma)
                t = 1.0 / (abs(zeta) + np.sqrt(zeta * zeta + 1.0))
                if zeta < 0.0:
                    t = -t
                c = 1.0 / np.sqrt(t * t + 1.0)
                sn = c * t
                wp_new = c * wp - sn * wq
                wq_new = sn * wp + c * wq
                w[:, p] = wp_new
                w[:, q] = wq_new
                vp = v[:, p].copy()
                vq = v[:, q].copy()
                v[:, p] = c * vp - sn * vq
                v[:, q] = sn * vp + c * vq
        if not rotated:
            break
    return w, v


def weighted_terms(x, e, w):
    """Fused evaluation of the weighted-loss building blocks.

    Given rows ``x`` (N x d), a unit target ``e`` and weights ``w``,
    returns ``(eig, tr, r, row_sq)`` where ``r = x @ e``,
    ``eig = sum_i w_i r_i^2``, ``row_sq_i = ||x_i - r_i e||^2`` and
    ``tr = sum_i w_i row_sq_i``.  ``r^2`` and ``row_sq`` are exactly the
    per-row derivatives of ``eig`` and ``tr`` with respect to ``w``.
    """
    x = np.ascontiguousarray(x, dtype=np.float64)
    e = np.ascontiguousarray(e, dtype=np.float64)
    w = np.ascontiguousarray(w, dtype=np.float64)
    r = x @ e
    xbar = x - np.outer(r, e)
    row_sq = np.einsum("ij,ij->i", xbar, xbar)
    eig = float(w @ (r * r))
    tr = float(w @ row_sq)
    return eig, tr, r, row_sq
