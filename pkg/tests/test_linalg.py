"""Eigensolver, SVD and Procrustes against independent oracles."""

import numpy as np
import pytest

from eigfree.errors import DegenerateInput, InvalidInput
from eigfree.linalg import (
    det2,
    det3,
    fro_norm,
    multiply,
    procrustes_to_rotation,
    solve2,
    solve3,
    svd_small,
    sym_eig,
    trace,
    transpose,
)


def char_poly_roots(s):
    """Eigenvalue oracle: roots of the characteristic polynomial.

    Coefficients come from the Faddeev-LeVerrier recursion (trace powers
    only); the roots come from numpy's companion-matrix solver.  Entirely
    independent of the Jacobi path under test.
    """
    s = np.asarray(s, dtype=np.float64)
    d = s.shape[0]
    coeffs = [1.0]
    m = np.zeros_like(s)
    for k in range(1, d + 1):
        m = s @ m + coeffs[-1] * np.eye(d)
        coeffs.append(-np.trace(s @ m) / k)
    return np.sort(np.roots(coeffs).real)


class TestSymEig:
    def test_identity(self):
        res = sym_eig(np.eye(3))
        assert np.allclose(res.values, [1.0, 1.0, 1.0])
        assert np.allclose(res.vectors @ res.vectors.T, np.eye(3), atol=1e-12)

    def test_diagonal_sorted_ascending(self):
        res = sym_eig(np.diag([3.0, 1.0, 2.0]))
        assert np.allclose(res.values, [1.0, 2.0, 3.0])
        # vectors are permuted axes up to sign; sign convention makes them exact
        expected = np.zeros((3, 3))
        expected[1, 0] = expected[2, 1] = expected[0, 2] = 1.0
        assert np.allclose(res.vectors, expected)

    def test_random_reconstruction_and_char_poly_oracle(self):
        rng = np.random.default_rng(42)
        for _ in range(20):
            a = rng.standard_normal((5, 5))
            s = 0.5 * (a + a.T)
            res = sym_eig(s)
            recon = res.vectors @ np.diag(res.values) @ res.vectors.T
            norm = fro_norm(s)
            assert fro_norm(recon - s) <= 1e-12 * max(norm, 1.0)
            oracle = char_poly_roots(s)
            assert np.abs(np.sort(res.values) - oracle).max() <= 1e-8 * max(norm, 1.0)

    def test_orthonormal_columns(self):
        rng = np.random.default_rng(3)
        a = rng.standard_normal((7, 7))
        s = a + a.T
        res = sym_eig(s)
        assert np.abs(res.vectors.T @ res.vectors - np.eye(7)).max() <= 1e-10

    def test_trace_and_det_identities(self):
        rng = np.random.default_rng(11)
        for d in (2, 3):
            a = rng.standard_normal((d, d))
            s = a + a.T
            res = sym_eig(s)
            assert abs(res.values.sum() - np.trace(s)) <= 1e-10 * max(fro_norm(s), 1.0)
            det = det2(s) if d == 2 else det3(s)
            assert abs(np.prod(res.values) - det) <= 1e-9 * max(fro_norm(s) ** d, 1.0)

    def test_bitwise_determinism(self):
        rng = np.random.default_rng(5)
        a = rng.standard_normal((6, 6))
        s = a + a.T
        r1 = sym_eig(s.copy())
        r2 = sym_eig(s.copy())
        assert r1.values.tobytes() == r2.values.tobytes()
        assert r1.vectors.tobytes() == r2.vectors.tobytes()

    def test_rejects_non_symmetric(self):
        with pytest.raises(InvalidInput):
            sym_eig(np.array([[1.0, 2.0], [0.0, 1.0]]))

    def test_rejects_non_finite(self):
        with pytest.raises(InvalidInput):
            sym_eig(np.array([[np.nan, 0.0], [0.0, 1.0]]))

    def test_rejects_oversize(self):
        with pytest.raises(InvalidInput):
            sym_eig(np.eye(17))


class TestSvdSmall:
    def test_identity(self):
        res = svd_small(np.eye(3))
        assert np.allclose(res.s, [1.0, 1.0, 1.0])

    def test_rank_deficient_diagonal(self):
        res = svd_small(np.diag([0.0, 2.0]))
        assert np.allclose(res.s, [2.0, 0.0])
        assert np.abs(res.u.T @ res.u - np.eye(2)).max() <= 1e-10

    def test_singular_values_match_sym_eig(self):
        rng = np.random.default_rng(9)
        a = rng.standard_normal((6, 4))
        res = svd_small(a)
        eig = sym_eig(a.T @ a)
        assert np.abs(np.sort(res.s**2) - eig.values).max() <= 1e-10 * max(
            fro_norm(a) ** 2, 1.0
        )

    def test_reconstruction_various_shapes(self):
        rng = np.random.default_rng(13)
        for shape in [(3, 3), (8, 5), (4, 7), (20, 2)]:
            a = rng.standard_normal(shape)
            res = svd_small(a)
            recon = res.u @ np.diag(res.s) @ res.v.T
            assert fro_norm(recon - a) <= 1e-10 * max(fro_norm(a), 1.0)
            r = min(shape)
            assert np.abs(res.u.T @ res.u - np.eye(r)).max() <= 1e-10
            assert np.abs(res.v.T @ res.v - np.eye(r)).max() <= 1e-10
            assert np.all(np.diff(res.s) <= 1e-12)
            assert np.all(res.s >= 0.0)

    def test_zero_matrix(self):
        res = svd_small(np.zeros((4, 3)))
        assert np.allclose(res.s, 0.0)
        assert np.abs(res.u.T @ res.u - np.eye(3)).max() <= 1e-10

    def test_rejects_oversize(self):
        with pytest.raises(InvalidInput):
            svd_small(np.zeros((513, 3)))
        with pytest.raises(InvalidInput):
            svd_small(np.zeros((3, 17)))


def random_rotation_oracle(rng):
    q = rng.standard_normal(4)
    q /= np.linalg.norm(q)
    w, x, y, z = q
    return np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
            [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
            [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
        ]
    )


class TestProcrustes:
    def test_identity_and_scale(self):
        assert np.allclose(procrustes_to_rotation(np.eye(3)), np.eye(3))
        assert np.allclose(procrustes_to_rotation(2.0 * np.eye(3)), np.eye(3))

    def test_output_is_rotation(self):
        rng = np.random.default_rng(21)
        m = rng.standard_normal((3, 3))
        r = procrustes_to_rotation(m)
        assert np.abs(r.T @ r - np.eye(3)).max() <= 1e-10
        assert abs(det3(r) - 1.0) <= 1e-10

    def test_maximizes_trace_against_sampled_rotations(self):
        rng = np.random.default_rng(22)
        m = rng.standard_normal((3, 3))
        r = procrustes_to_rotation(m)
        best = np.trace(r.T @ m)
        for _ in range(10_000):
            cand = random_rotation_oracle(rng)
            assert np.trace(cand.T @ m) <= best + 1e-9

    def test_idempotent_on_rotations(self):
        rng = np.random.default_rng(23)
        r = random_rotation_oracle(rng)
        assert np.abs(procrustes_to_rotation(r) - r).max() <= 1e-12

    def test_rank_deficient_raises(self):
        m = np.outer([1.0, 0.0, 0.0], [1.0, 2.0, 3.0])
        with pytest.raises(DegenerateInput):
            procrustes_to_rotation(m)


class TestMatBasic:
    def test_trace_identity(self):
        assert trace(np.eye(4)) == 4.0

    def test_zero_norm(self):
        assert fro_norm(np.zeros((3, 5))) == 0.0

    def test_product_transpose_identity(self):
        rng = np.random.default_rng(31)
        a = rng.standard_normal((4, 6))
        b = rng.standard_normal((6, 3))
        lhs = transpose(multiply(a, b))
        rhs = multiply(transpose(b), transpose(a))
        assert np.abs(lhs - rhs).max() <= 1e-14

    def test_multiply_dimension_mismatch(self):
        with pytest.raises(InvalidInput):
            multiply(np.eye(3), np.eye(4))

    def test_solvers(self):
        rng = np.random.default_rng(32)
        a2 = rng.standard_normal((2, 2)) + 2 * np.eye(2)
        b2 = rng.standard_normal(2)
        assert np.abs(a2 @ solve2(a2, b2) - b2).max() <= 1e-12
        a3 = rng.standard_normal((3, 3)) + 2 * np.eye(3)
        b3 = rng.standard_normal(3)
        assert np.abs(a3 @ solve3(a3, b3) - b3).max() <= 1e-12

    def test_singular_solve_raises(self):
        with pytest.raises(DegenerateInput):
            solve2(np.ones((2, 2)), np.array([1.0, 2.0]))
        with pytest.raises(DegenerateInput):
            solve3(np.ones((3, 3)), np.array([1.0, 2.0, 3.0]))
