import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ddhinf import lmicore
from ddhinf.linsys import batch_reactor


def rand_sym(rng, n):
    S = rng.standard_normal((n, n))
    return 0.5 * (S + S.T)


class TestSvecSmat:
    def test_identity_2x2(self):
        np.testing.assert_allclose(lmicore.svec(np.eye(2)), [1.0, 0.0, 1.0])

    def test_offdiagonal_scaling(self):
        v = lmicore.svec(np.array([[0.0, 1.0], [1.0, 0.0]]))
        np.testing.assert_allclose(v, [0.0, np.sqrt(2.0), 0.0])

    def test_smat_identity(self):
        np.testing.assert_allclose(lmicore.smat([1.0, 0.0, 1.0]), np.eye(2))

    def test_bad_length_raises(self):
        with pytest.raises(ValueError):
            lmicore.smat([1.0, 2.0, 3.0, 4.0])

    def test_inner_product_preserved(self):
        # svec is an isometry: dot of svecs equals the Frobenius inner product
        rng = np.random.default_rng(7)
        for _ in range(50):
            S1, S2 = rand_sym(rng, 5), rand_sym(rng, 5)
            frob = sum(S1[i, j] * S2[i, j] for i in range(5) for j in range(5))
            assert abs(lmicore.svec(S1) @ lmicore.svec(S2) - frob) < 1e-12

    def test_roundtrip(self):
        rng = np.random.default_rng(11)
        for _ in range(100):
            n = rng.integers(1, 7)
            S = rand_sym(rng, n)
            np.testing.assert_allclose(lmicore.smat(lmicore.svec(S)), S, atol=1e-14)
            v = rng.standard_normal(lmicore.svec_dim(n))
            np.testing.assert_allclose(lmicore.svec(lmicore.smat(v)), v, atol=1e-14)


class TestEigs:
    def test_min_eig_identity(self):
        assert lmicore.min_eigenvalue(np.eye(3)) == pytest.approx(1.0)

    def test_min_eig_diag(self):
        assert lmicore.min_eigenvalue(np.diag([3.0, -2.0])) == pytest.approx(-2.0)

    def test_min_eig_vs_charpoly_roots(self):
        # brute-force oracle at n=3: roots of the characteristic polynomial
        rng = np.random.default_rng(3)
        for _ in range(25):
            S = rand_sym(rng, 3)
            a, b, c = S[0, 0], S[1, 1], S[2, 2]
            d, e, f = S[0, 1], S[0, 2], S[1, 2]
            coeffs = [1.0,
                      -(a + b + c),
                      a * b + a * c + b * c - d * d - e * e - f * f,
                      -(a * b * c + 2 * d * e * f - a * f * f - b * e * e - c * d * d)]
            oracle = min(np.roots(coeffs).real)
            tol = 1e-10 * max(1.0, np.linalg.norm(S))
            assert abs(lmicore.min_eigenvalue(S) - oracle) < max(tol, 1e-8)

    @given(st.integers(1, 5), st.floats(-5, 5), st.integers(0, 2**32 - 1))
    @settings(max_examples=60, deadline=None)
    def test_shift_property(self, n, c, seed):
        S = rand_sym(np.random.default_rng(seed), n)
        shifted = lmicore.min_eigenvalue(S + c * np.eye(n))
        assert abs(shifted - (lmicore.min_eigenvalue(S) + c)) < 1e-10

    def test_is_psd(self):
        assert lmicore.is_psd(np.eye(2), tol=0.0)
        assert not lmicore.is_psd(-np.eye(2), tol=0.99)
        assert lmicore.is_psd(np.zeros((3, 3)), tol=0.0)


class TestAssembleBlocks:
    def test_diag_identity(self):
        F = lmicore.assemble_blocks([2, 2], {(0, 0): np.eye(2), (1, 1): np.eye(2)})
        np.testing.assert_allclose(F, np.eye(4))

    def test_aux_shape_with_zero_cross_terms(self):
        # 3-block aux condition with Q=I, C_L=0, E1=0, g=1 collapses to identity
        F = lmicore.assemble_blocks(
            [2, 2, 1],
            {(0, 0): np.eye(2), (0, 1): np.zeros((2, 2)), (0, 2): np.zeros((2, 1)),
             (1, 1): np.eye(2), (1, 2): np.zeros((2, 1)), (2, 2): np.eye(1)})
        np.testing.assert_allclose(F, np.eye(5))

    def test_transpose_convention(self):
        rng = np.random.default_rng(5)
        M = rng.standard_normal((2, 3))
        F = lmicore.assemble_blocks([2, 3], {(0, 1): M})
        np.testing.assert_array_equal(F[2:, :2], M.T)
        np.testing.assert_array_equal(F, F.T)

    def test_always_symmetric(self):
        rng = np.random.default_rng(9)
        for _ in range(20):
            blocks = {(0, 0): rand_sym(rng, 2), (0, 1): rng.standard_normal((2, 3)),
                      (1, 1): rand_sym(rng, 3)}
            F = lmicore.assemble_blocks([2, 3], blocks)
            np.testing.assert_array_equal(F, F.T)

    def test_shape_mismatch_names_block(self):
        with pytest.raises(ValueError, match=r"\(0,1\)"):
            lmicore.assemble_blocks([2, 2], {(0, 1): np.zeros((3, 2))})

    def test_lower_triangle_rejected(self):
        with pytest.raises(ValueError, match="below the diagonal"):
            lmicore.assemble_blocks([1, 1], {(1, 0): np.eye(1)})


class TestSpectralRadius:
    def test_diag(self):
        assert lmicore.spectral_radius(np.diag([0.5, -0.2])) == pytest.approx(0.5)

    def test_rotation(self):
        th = 0.7
        R = np.array([[np.cos(th), -np.sin(th)], [np.sin(th), np.cos(th)]])
        assert lmicore.spectral_radius(R) == pytest.approx(1.0)

    def test_batch_reactor_unstable(self):
        assert lmicore.spectral_radius(batch_reactor().A) > 1.0
