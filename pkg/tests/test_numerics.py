"""Tests for the dense linear-algebra substrate, checked against independent oracles."""

import numpy as np
import pytest

from monarch_peft.errors import StructuralError
from monarch_peft.numerics import (
    as_matrix,
    as_vector,
    format_matrix,
    fro_norm_sq,
    matmul,
    numerical_rank,
    parse_matrix,
    read_matrix,
    spectral_norm,
    svd,
    truncated_svd,
    write_matrix,
)


def matmul_oracle(a, b):
    """Independently coded naive triple loop."""
    rows, inner = a.shape
    cols = b.shape[1]
    out = np.zeros((rows, cols))
    for i in range(rows):
        for j in range(cols):
            acc = 0.0
            for k in range(inner):
                acc += a[i, k] * b[k, j]
            out[i, j] = acc
    return out


def gram_eigs_power_oracle(a, count, iters=50_000, seed=0):
    """Eigenvalues of a^T a via power iteration with deflation."""
    g = a.T @ a
    rng = np.random.default_rng(seed)
    vals = []
    for _ in range(count):
        v = rng.standard_normal(g.shape[0])
        v /= np.linalg.norm(v)
        for _ in range(iters):
            w = g @ v
            norm = np.linalg.norm(w)
            if norm == 0.0:
                break
            v = w / norm
        lam = float(v @ g @ v)
        vals.append(max(lam, 0.0))
        g = g - lam * np.outer(v, v)
    return np.array(sorted(vals, reverse=True))


class TestConstructors:
    def test_as_matrix_rejects_wrong_ndim(self):
        with pytest.raises(StructuralError):
            as_matrix([1.0, 2.0])

    def test_as_matrix_rejects_nan(self):
        with pytest.raises(StructuralError):
            as_matrix([[1.0, np.nan]])

    def test_as_vector_rejects_inf(self):
        with pytest.raises(StructuralError):
            as_vector([1.0, np.inf])


class TestMatmul:
    def test_identity(self):
        rng = np.random.default_rng(0)
        b = rng.standard_normal((3, 5))
        assert np.array_equal(matmul(np.eye(3), b), b)

    def test_hand_example(self):
        a = [[1.0, 2.0], [3.0, 4.0]]
        b = [[0.0, 1.0], [1.0, 0.0]]
        assert np.array_equal(matmul(a, b), [[2.0, 1.0], [4.0, 3.0]])

    def test_against_triple_loop(self):
        rng = np.random.default_rng(7)
        a = rng.standard_normal((8, 8))
        b = rng.standard_normal((8, 8))
        assert np.abs(matmul(a, b) - matmul_oracle(a, b)).max() < 1e-12

    def test_dimension_mismatch(self):
        with pytest.raises(StructuralError):
            matmul(np.ones((2, 3)), np.ones((2, 3)))

    def test_associativity(self):
        rng = np.random.default_rng(11)
        for _ in range(5):
            a, b, c = (rng.standard_normal((6, 6)) for _ in range(3))
            left = matmul(matmul(a, b), c)
            right = matmul(a, matmul(b, c))
            assert np.abs(left - right).max() < 1e-10 * np.abs(left).max()


class TestSvd:
    def test_diagonal(self):
        res = svd(np.diag([3.0, 1.0]))
        assert np.allclose(res.singular_values, [3.0, 1.0], atol=1e-14)

    def test_orthogonal_input_has_unit_spectrum(self):
        rng = np.random.default_rng(3)
        q, _ = np.linalg.qr(rng.standard_normal((5, 5)))
        res = svd(q)
        assert np.abs(res.singular_values - 1.0).max() < 1e-12

    def test_invariants_random_6x4(self):
        rng = np.random.default_rng(5)
        a = rng.standard_normal((6, 4))
        res = svd(a)
        assert np.all(np.diff(res.singular_values) <= 0.0)
        assert np.all(res.singular_values >= 0.0)
        assert np.abs(res.u.T @ res.u - np.eye(4)).max() < 1e-10
        assert np.abs(res.vt @ res.vt.T - np.eye(4)).max() < 1e-10
        rec = res.u @ np.diag(res.singular_values) @ res.vt
        assert np.linalg.norm(rec - a) < 1e-9 * np.linalg.norm(a)

    def test_sigma_against_gram_power_iteration(self):
        rng = np.random.default_rng(5)
        a = rng.standard_normal((6, 4))
        sigmas = svd(a).singular_values
        lam = gram_eigs_power_oracle(a, 4)
        assert np.abs(sigmas - np.sqrt(lam)).max() < 1e-8

    def test_deterministic_and_sign_convention(self):
        rng = np.random.default_rng(9)
        a = rng.standard_normal((7, 7))
        r1, r2 = svd(a), svd(a)
        assert np.array_equal(r1.u, r2.u)
        assert np.array_equal(r1.vt, r2.vt)
        for j in range(7):
            peak = np.argmax(np.abs(r1.u[:, j]))
            assert r1.u[peak, j] > 0.0

    def test_degenerate_spectrum_reconstructs(self):
        # repeated singular values: compare reconstructions, never factors
        a = np.eye(4) * 2.0
        res = svd(a)
        rec = res.u @ np.diag(res.singular_values) @ res.vt
        assert np.abs(rec - a).max() < 1e-12
        assert np.allclose(res.singular_values, 2.0)

    def test_zero_matrix(self):
        res = svd(np.zeros((3, 3)))
        assert np.array_equal(res.singular_values, np.zeros(3))
        assert np.abs(res.u.T @ res.u - np.eye(3)).max() < 1e-12

    def test_wide_matrix(self):
        rng = np.random.default_rng(13)
        a = rng.standard_normal((3, 8))
        res = svd(a)
        rec = res.u @ np.diag(res.singular_values) @ res.vt
        assert np.linalg.norm(rec - a) < 1e-9 * np.linalg.norm(a)

    def test_does_not_mutate_input(self):
        rng = np.random.default_rng(17)
        a = np.asfortranarray(rng.standard_normal((4, 6)))
        before = a.copy()
        svd(a)
        assert np.array_equal(a, before)

    def test_dimension_cap(self):
        with pytest.raises(StructuralError):
            svd(np.zeros((4097, 1)))


class TestTruncatedSvd:
    def test_diagonal_residual(self):
        _, residual = truncated_svd(np.diag([3.0, 2.0, 1.0]), 1)
        assert abs(residual - 5.0) < 1e-12

    def test_full_rank_kept(self):
        rng = np.random.default_rng(19)
        a = rng.standard_normal((5, 4))
        _, residual = truncated_svd(a, 4)
        assert residual < 1e-18 * fro_norm_sq(a)

    def test_residual_matches_dense_reconstruction(self):
        rng = np.random.default_rng(23)
        a = rng.standard_normal((4, 4))
        top, residual = truncated_svd(a, 2)
        rec = top.u @ np.diag(top.singular_values) @ top.vt
        assert abs(residual - fro_norm_sq(a - rec)) < 1e-10

    def test_q_zero(self):
        rng = np.random.default_rng(29)
        a = rng.standard_normal((3, 3))
        top, residual = truncated_svd(a, 0)
        assert top.u.shape == (3, 0) and top.vt.shape == (0, 3)
        assert abs(residual - fro_norm_sq(a)) < 1e-9 * fro_norm_sq(a)

    def test_q_out_of_range(self):
        with pytest.raises(StructuralError):
            truncated_svd(np.eye(3), 4)
        with pytest.raises(StructuralError):
            truncated_svd(np.eye(3), -1)

    def test_eckart_young_spot_check(self):
        rng = np.random.default_rng(31)
        a = rng.standard_normal((5, 4))
        for q in range(5):
            _, residual = truncated_svd(a, q)
            for _ in range(200):
                left = rng.standard_normal((5, q))
                right = rng.standard_normal((q, 4))
                assert residual <= fro_norm_sq(a - left @ right) + 1e-12


class TestNormsAndRank:
    def test_identity(self):
        eye = np.eye(4)
        assert fro_norm_sq(eye) == 4.0
        assert abs(spectral_norm(eye) - 1.0) < 1e-12
        assert numerical_rank(eye, 1e-10) == 4

    def test_zero(self):
        z = np.zeros((3, 3))
        assert fro_norm_sq(z) == 0.0
        assert numerical_rank(z, 1e-10) == 0

    def test_rank_two_outer_products(self):
        rng = np.random.default_rng(37)
        a = np.outer(rng.standard_normal(5), rng.standard_normal(5))
        a += np.outer(rng.standard_normal(5), rng.standard_normal(5))
        assert numerical_rank(a, 1e-10) == 2

    def test_rel_tol_domain(self):
        for bad in (0.0, 1.0, -0.5, 2.0):
            with pytest.raises(StructuralError):
                numerical_rank(np.eye(2), bad)

    def test_fro_equals_spectrum_mass(self):
        rng = np.random.default_rng(41)
        a = rng.standard_normal((7, 5))
        mass = float(np.sum(svd(a).singular_values ** 2))
        assert abs(mass - fro_norm_sq(a)) < 1e-9 * fro_norm_sq(a)


class TestMatrixTextFormat:
    def test_roundtrip_exact(self, tmp_path):
        rng = np.random.default_rng(43)
        a = rng.standard_normal((3, 5)) * 10.0 ** rng.uniform(-8, 8, (3, 5))
        path = tmp_path / "m.txt"
        write_matrix(a, path)
        assert np.array_equal(read_matrix(path), a)

    def test_header_shape(self):
        text = format_matrix(np.ones((2, 3)))
        assert text.splitlines()[0] == "2,3"

    @pytest.mark.parametrize(
        "text",
        [
            "",
            "2\n1,2\n3,4",
            "2,2\n1,2",
            "2,2\n1,2\n3",
            "2,2\n1,2\n3,x",
            "0,2\n",
        ],
    )
    def test_parse_errors(self, text):
        with pytest.raises(StructuralError):
            parse_matrix(text)

    def test_missing_file(self, tmp_path):
        with pytest.raises(StructuralError):
            read_matrix(tmp_path / "absent.txt")
