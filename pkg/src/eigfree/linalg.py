"""Minimal dense real linear algebra for small matrices.

Matrices are plain float64 ``numpy.ndarray`` objects (row-major, finite
entries); this module owns the decompositions the rest of the package
relies on: a cyclic-Jacobi symmetric eigensolver, a one-sided Jacobi SVD
for skinny matrices, and the Procrustes projection onto rotations.  The
eigensolver and SVD cores run on the selected kernel backend (compiled or
NumPy); everything here is deterministic: identical input bytes produce
identical output bytes.
"""

from dataclasses import dataclass

import numpy as np

from . import _backend
from .errors import DegenerateInput, InvalidInput

MAX_EIG_DIM = 16
MAX_SVD_ROWS = 512
MAX_SVD_COLS = 16
SYMMETRY_REL_TOL = 1e-12


@dataclass(frozen=True)
class SymEigResult:
    """Eigenvalues ascending; column k of ``vectors`` pairs with ``values[k]``."""

    values: np.ndarray
    vectors: np.ndarray


@dataclass(frozen=True)
class SvdResult:
    """``u @ diag(s) @ v.T`` reconstructs the input; ``s`` descending, >= 0."""

    u: np.ndarray
    s: np.ndarray
    v: np.ndarray


def _as_matrix(a, name="matrix"):
    a = np.asarray(a, dtype=np.float64)
    if a.ndim != 2:
        raise InvalidInput(f"{name} must be 2-D, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise InvalidInput(f"{name} has non-finite entries")
    return a


def fix_sign(vec):
    """Sign convention: the largest-magnitude component is made positive.

    Ties break on the first occurrence, so the convention is deterministic.
    """
    v = np.asarray(vec, dtype=np.float64)
    k = int(np.argmax(np.abs(v)))
    return -v if v[k] < 0.0 else v.copy()


def sym_eig(s) -> SymEigResult:
    """Eigendecomposition of a symmetric matrix (d <= 16).

    Cyclic Jacobi with threshold sweeps; eigenvalues sorted ascending and
    each eigenvector sign-fixed by :func:`fix_sign`.
    """
    s = _as_matrix(s, "sym_eig input")
    d = s.shape[0]
    if s.shape[1] != d:
        raise InvalidInput(f"sym_eig input must be square, got {s.shape}")
    if d > MAX_EIG_DIM:
        raise InvalidInput(f"sym_eig supports d <= {MAX_EIG_DIM}, got {d}")
    scale = float(np.abs(s).max())
    asym = float(np.abs(s - s.T).max())
    if asym > SYMMETRY_REL_TOL * max(scale, 1.0):
        raise InvalidInput("sym_eig input is not symmetric within tolerance")
    sym = 0.5 * (s + s.T)
    values, vectors = _backend.jacobi_eigh(sym)
    order = np.argsort(values, kind="stable")
    values = values[order]
    vectors = vectors[:, order]
    for k in range(d):
        vectors[:, k] = fix_sign(vectors[:, k])
    return SymEigResult(values=values, vectors=vectors)


def svd_small(a) -> SvdResult:
    """SVD of an m x n matrix with m <= 512, n <= 16, via one-sided Jacobi.

    Returns ``u`` (m x r), ``s`` (r, descending, non-negative) and ``v``
    (n x r) with r = min(m, n).  Columns of ``u`` belonging to zero
    singular values are completed to an orthonormal set.
    """
    a = _as_matrix(a, "svd input")
    m, n = a.shape
    if m > MAX_SVD_ROWS or n > MAX_SVD_COLS:
        raise InvalidInput(
            f"svd_small supports m <= {MAX_SVD_ROWS}, n <= {MAX_SVD_COLS}, got {a.shape}"
        )
    transposed = m < n
    work = a.T if transposed else a
    w, v = _backend.jacobi_svd(work)
    norms = np.sqrt(np.einsum("ij,ij->j", w, w))
    order = np.argsort(-norms, kind="stable")
    s = norms[order]
    w = w[:, order]
    v = v[:, order]
    r = min(m, n)
    s = s[:r]
    w = w[:, :r]
    v = v[:, :r]
    u = np.zeros_like(w)
    cutoff = s[0] * 1e-13 * max(m, n) if s[0] > 0.0 else 0.0
    for j in range(r):
        if s[j] > cutoff:
            u[:, j] = w[:, j] / s[j]
        else:
            s[j] = 0.0
            u[:, j] = _complete_column(u, j)
    for j in range(r):
        k = int(np.argmax(np.abs(u[:, j])))
        if u[k, j] < 0.0:
            u[:, j] = -u[:, j]
            v[:, j] = -v[:, j]
    if transposed:
        u, v = v, u
    return SvdResult(u=u, s=s, v=v)


def _complete_column(u, j):
    # Deterministic orthonormal completion: first canonical basis vector
    # whose projection residual against columns 0..j-1 stays large.
    dim = u.shape[0]
    for k in range(dim):
        cand = np.zeros(dim)
        cand[k] = 1.0
        for i in range(j):
            cand -= (cand @ u[:, i]) * u[:, i]
        norm = float(np.sqrt(cand @ cand))
        if norm > 0.5:
            return cand / norm
    raise DegenerateInput("could not complete orthonormal basis")


def procrustes_to_rotation(m) -> np.ndarray:
    """Nearest rotation (Frobenius sense) to a 3x3 matrix.

    ``R = U diag(1, 1, det(U V^T)) V^T`` from :func:`svd_small`; raises
    :class:`DegenerateInput` when the matrix has rank < 2.
    """
    m = _as_matrix(m, "procrustes input")
    if m.shape != (3, 3):
        raise InvalidInput(f"procrustes_to_rotation needs a 3x3 matrix, got {m.shape}")
    res = svd_small(m)
    if res.s[1] <= max(res.s[0], 1.0) * 1e-12:
        raise DegenerateInput("procrustes_to_rotation: input rank < 2")
    d = det3(res.u @ res.v.T)
    corr = np.array([1.0, 1.0, 1.0 if d >= 0.0 else -1.0])
    return (res.u * corr) @ res.v.T


# --- basic matrix operations -------------------------------------------------

def multiply(a, b):
    a = _as_matrix(a, "multiply lhs")
    b = _as_matrix(b, "multiply rhs")
    if a.shape[1] != b.shape[0]:
        raise InvalidInput(f"multiply dimension mismatch: {a.shape} x {b.shape}")
    return a @ b


def transpose(a):
    return _as_matrix(a).T.copy()


def trace(a):
    a = _as_matrix(a)
    if a.shape[0] != a.shape[1]:
        raise InvalidInput(f"trace needs a square matrix, got {a.shape}")
    return float(np.trace(a))


def fro_norm(a):
    a = np.asarray(a, dtype=np.float64)
    return float(np.sqrt((a * a).sum()))


def det2(a):
    a = _as_matrix(a)
    if a.shape != (2, 2):
        raise InvalidInput(f"det2 needs a 2x2 matrix, got {a.shape}")
    return float(a[0, 0] * a[1, 1] - a[0, 1] * a[1, 0])


def det3(a):
    a = _as_matrix(a)
    if a.shape != (3, 3):
        raise InvalidInput(f"det3 needs a 3x3 matrix, got {a.shape}")
    return float(
        a[0, 0] * (a[1, 1] * a[2, 2] - a[1, 2] * a[2, 1])
        - a[0, 1] * (a[1, 0] * a[2, 2] - a[1, 2] * a[2, 0])
        + a[0, 2] * (a[1, 0] * a[2, 1] - a[1, 1] * a[2, 0])
    )


def solve2(a, b):
    """Cramer solve of a 2x2 system; DegenerateInput when singular."""
    a = _as_matrix(a)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != (2, 2) or b.shape != (2,):
        raise InvalidInput("solve2 needs a 2x2 matrix and length-2 rhs")
    d = det2(a)
    scale = float(np.abs(a).max())
    if abs(d) <= 1e-14 * max(scale * scale, 1e-300):
        raise DegenerateInput("solve2: singular system")
    x0 = (b[0] * a[1, 1] - b[1] * a[0, 1]) / d
    x1 = (a[0, 0] * b[1] - a[1, 0] * b[0]) / d
    return np.array([x0, x1])


def solve3(a, b):
    """Cramer solve of a 3x3 system; DegenerateInput when singular."""
    a = _as_matrix(a)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != (3, 3) or b.shape != (3,):
        raise InvalidInput("solve3 needs a 3x3 matrix and length-3 rhs")
    d = det3(a)
    scale = float(np.abs(a).max())
    if abs(d) <= 1e-14 * max(scale**3, 1e-300):
        raise DegenerateInput("solve3: singular system")
    out = np.empty(3)
    for k in range(3):
        m = a.copy()
        m[:, k] = b
        out[k] = det3(m) / d
    return out
