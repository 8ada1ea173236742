import numpy as np
import pytest

from mer_lab.models.schema import MerConfig
from mer_lab.tools import regularizer
from mer_lab.tools.gradient_check import central_difference, random_batch, relative_error
from mer_lab.utils.linalg import SeededRng, gaussian_matrix
from mer_lab.utils.validators import DegenerateError, NotPositiveDefiniteError


class TestMerConfigDefaults:
    def test_defaults(self):
        cfg = MerConfig()
        assert (cfg.lam, cfg.alpha_marg, cfg.alpha_spec, cfg.gamma, cfg.eps) == (3.0, 1.0, 1.0, 1.0, 1e-4)

    def test_component_variants(self):
        assert MerConfig().marginal_only().alpha_spec == 0.0
        assert MerConfig().spectral_only().alpha_marg == 0.0


class TestStandardize:
    def test_constant_column(self):
        np.testing.assert_array_equal(regularizer.standardize(np.full((3, 1), 5.0), 1e-4), np.zeros((3, 1)))

    def test_two_values(self):
        z_hat = regularizer.standardize([[0.0], [2.0]], 1e-4)
        np.testing.assert_allclose(z_hat[:, 0], [-1 / np.sqrt(2.0001), 1 / np.sqrt(2.0001)])
        assert z_hat[1, 0] == pytest.approx(0.707089, abs=1e-6)

    def test_idempotent_on_standardized(self):
        z = regularizer.standardize(gaussian_matrix(SeededRng(0), 30, 4), 0.0)
        np.testing.assert_allclose(regularizer.standardize(z, 1e-12), z, atol=1e-6)

    def test_single_row(self):
        with pytest.raises(DegenerateError):
            regularizer.standardize([[1.0, 2.0]], 1e-4)


class TestCorrelation:
    def test_identical_columns(self):
        col = np.array([1.0, 2.0, 4.0, 7.0])
        c = regularizer.correlation(regularizer.standardize(np.column_stack([col, col]), 1e-4))
        assert c[0, 1] == pytest.approx(c[0, 0])
        assert c[0, 0] == pytest.approx(1.0, abs=1e-4)

    def test_orthogonal_signs(self, orthogonal_signs):
        c = regularizer.correlation(regularizer.standardize(orthogonal_signs, 1e-4))
        assert c[0, 1] == pytest.approx(0.0, abs=1e-15)
        np.testing.assert_allclose(np.diag(c), [4 / 3 / (4 / 3 + 1e-4)] * 2)

    def test_single_column(self):
        assert regularizer.correlation([[1.0], [2.0]]).shape == (1, 1)


class TestMarginalLoss:
    def test_inactive_hinge(self):
        z = 3.0 * gaussian_matrix(SeededRng(1), 50, 4)
        loss, _ = regularizer.marginal_loss(z, 1.0, 1e-4)
        assert loss == 0.0
        np.testing.assert_array_equal(regularizer.marginal_grad(z, 1.0, 1e-4), np.zeros_like(z))

    def test_constant_matrix(self):
        loss, sigmas = regularizer.marginal_loss(np.full((6, 3), 2.0), 1.0, 1e-4)
        assert loss == pytest.approx(0.99, abs=1e-15)
        np.testing.assert_allclose(sigmas, 0.01)

    def test_two_values(self):
        loss, _ = regularizer.marginal_loss([[0.0], [0.2]], 1.0, 1e-4)
        assert loss == pytest.approx(1 - np.sqrt(0.0201), abs=1e-12)
        assert loss == pytest.approx(0.8582255, abs=1e-7)

    def test_single_row(self):
        with pytest.raises(DegenerateError):
            regularizer.marginal_loss([[1.0]], 1.0, 1e-4)

    def test_gradient_pulls_active_dims_outward(self):
        z = gaussian_matrix(SeededRng(12), 20, 6) * np.array([0.2, 0.5, 3.0, 0.3, 4.0, 5.0])
        _, sigmas = regularizer.marginal_loss(z, 1.0, 1e-4)
        grad = regularizer.marginal_grad(z, 1.0, 1e-4)
        deviation = z - z.mean(axis=0)
        active = sigmas < 1.0
        assert active.any() and not active.all()
        assert np.all(np.sign(grad[:, active]) == -np.sign(deviation[:, active]))
        np.testing.assert_array_equal(grad[:, ~active], 0.0)


class TestSpectralLoss:
    def test_uncorrelated_columns(self, orthogonal_signs):
        # diag(C) is 4/3 / (4/3 + eps) for these columns, so C + eps*I is diagonal
        loss, _ = regularizer.spectral_loss(orthogonal_signs, 1e-4)
        diag = 4 / 3 / (4 / 3 + 1e-4) + 1e-4
        assert loss == pytest.approx(-np.log(diag), abs=1e-12)

    def test_identity_correlation_case(self, orthogonal_signs):
        # at large scale var/(var + eps) -> 1 and C + eps*I -> (1 + eps) I
        loss, _ = regularizer.spectral_loss(1e4 * orthogonal_signs, 1e-4)
        assert loss == pytest.approx(-np.log(1.0001), abs=1e-9)
        assert loss == pytest.approx(-9.99950e-5, abs=1e-9)

    def test_identical_columns(self):
        col = np.array([1.0, 2.0, 4.0, 7.0])
        loss, _ = regularizer.spectral_loss(np.column_stack([col, col]), 1e-4)
        var = np.var(col, ddof=1)
        cdd = var / (var + 1e-4)
        expected = -0.5 * np.log((cdd + 1e-4) ** 2 - cdd**2)
        assert loss == pytest.approx(expected, rel=1e-6)
        assert loss == pytest.approx(4.2585, abs=1e-3)

    def test_single_dimension(self):
        z = [[0.0], [1.0], [3.0]]
        var = np.var([0.0, 1.0, 3.0], ddof=1)
        loss, _ = regularizer.spectral_loss(z, 1e-4)
        assert loss == pytest.approx(-np.log(var / (var + 1e-4) + 1e-4), abs=1e-14)

    def test_lower_bound(self):
        rng = SeededRng(9)
        for seed in range(100):
            child = rng.child(seed)
            n, d = int(child.integers(2, 40)), int(child.integers(1, 12))
            loss, _ = regularizer.spectral_loss(random_batch(child, n, d), 1e-4)
            assert loss >= -np.log(1 + 1e-4) - 1e-12

    def test_duplicated_column_never_lowers_loss(self):
        rng = SeededRng(13)
        for seed in range(30):
            child = rng.child(seed)
            z = random_batch(child, 20, 5)
            i, j = (int(v) for v in child.permutation(5)[:2])
            copied = z.copy()
            copied[:, i] = z[:, j]
            assert regularizer.spectral_loss(copied, 1e-4)[0] >= regularizer.spectral_loss(z, 1e-4)[0]

    def test_gradient_columns_sum_to_zero(self):
        rng = SeededRng(14)
        for seed in range(10):
            grad = regularizer.spectral_grad(random_batch(rng.child(seed), 16, 8), 1e-4)
            assert np.max(np.abs(grad.sum(axis=0))) < 1e-9

    def test_stationary_at_uncorrelated(self, orthogonal_signs):
        z = np.vstack([orthogonal_signs, -orthogonal_signs])
        base, _ = regularizer.spectral_loss(z, 1e-10)
        rng = SeededRng(2)
        for seed in range(20):
            bumped, _ = regularizer.spectral_loss(z + 1e-3 * gaussian_matrix(rng.child(seed), *z.shape), 1e-10)
            assert bumped >= base - 1e-9


class TestGradients:
    def _check(self, loss_fn, grad_fn, z, tol=1e-5):
        assert relative_error(grad_fn(z), central_difference(loss_fn, z, 1e-5)) < tol

    def test_marginal_matches_finite_differences(self):
        z = random_batch(SeededRng(3), 16, 8)
        self._check(
            lambda x: regularizer.marginal_loss(x, 1.0, 1e-4)[0],
            lambda x: regularizer.marginal_grad(x, 1.0, 1e-4),
            z,
        )

    def test_spectral_matches_finite_differences(self):
        z = random_batch(SeededRng(4), 16, 8)
        self._check(
            lambda x: regularizer.spectral_loss(x, 1e-4)[0],
            lambda x: regularizer.spectral_grad(x, 1e-4),
            z,
        )

    def test_combined_default_config(self):
        cfg = MerConfig()
        z = random_batch(SeededRng(5), 32, 16)
        self._check(lambda x: regularizer.mer_loss(x, cfg).combined, lambda x: regularizer.mer_loss_grad(x, cfg)[1], z)


class TestMerLossGrad:
    def test_all_weights_zero(self):
        z = random_batch(SeededRng(6), 10, 3)
        breakdown, grad = regularizer.mer_loss_grad(z, MerConfig(alpha_marg=0.0, alpha_spec=0.0))
        assert breakdown.combined == 0.0
        np.testing.assert_array_equal(grad, np.zeros_like(z))

    def test_marginal_only_is_additive(self):
        z = random_batch(SeededRng(7), 10, 3)
        breakdown, grad = regularizer.mer_loss_grad(z, MerConfig(alpha_spec=0.0))
        assert breakdown.combined == regularizer.marginal_loss(z, 1.0, 1e-4)[0]
        np.testing.assert_array_equal(grad, regularizer.marginal_grad(z, 1.0, 1e-4))

    def test_loss_only_agrees(self):
        z = random_batch(SeededRng(8), 12, 5)
        cfg = MerConfig()
        assert regularizer.mer_loss(z, cfg).combined == pytest.approx(regularizer.mer_loss_grad(z, cfg)[0].combined)

    def test_breakdown_formatting(self):
        breakdown = regularizer.mer_loss(np.full((4, 2), 1.0), MerConfig())
        assert breakdown.to_dict(digits=12)["marginal_loss"] == 0.99

    def test_translation_invariant(self):
        cfg = MerConfig()
        rng = SeededRng(15)
        for seed in range(10):
            child = rng.child(seed)
            z = random_batch(child, 24, 6)
            shifted = z + 5.0 * gaussian_matrix(child, 1, 6)
            base, base_grad = regularizer.mer_loss_grad(z, cfg)
            moved, moved_grad = regularizer.mer_loss_grad(shifted, cfg)
            assert moved.marginal_loss == pytest.approx(base.marginal_loss, abs=1e-10)
            assert moved.spectral_loss == pytest.approx(base.spectral_loss, abs=1e-10)
            assert moved.combined == pytest.approx(base.combined, abs=1e-10)
            np.testing.assert_allclose(moved.per_dim_sigma, base.per_dim_sigma, atol=1e-10)
            np.testing.assert_allclose(moved_grad, base_grad, atol=1e-9)

    def test_column_permutation_equivariant(self):
        cfg = MerConfig()
        rng = SeededRng(16)
        for seed in range(10):
            child = rng.child(seed)
            z = random_batch(child, 24, 6)
            perm = child.permutation(6)
            base, base_grad = regularizer.mer_loss_grad(z, cfg)
            permuted, permuted_grad = regularizer.mer_loss_grad(z[:, perm], cfg)
            np.testing.assert_allclose(permuted.per_dim_sigma, base.per_dim_sigma[perm], rtol=0, atol=1e-14)
            assert permuted.marginal_loss == pytest.approx(base.marginal_loss, abs=1e-12)
            assert permuted.spectral_loss == pytest.approx(base.spectral_loss, abs=1e-12)
            np.testing.assert_allclose(permuted_grad, base_grad[:, perm], atol=1e-10)

    def test_wide_video_batch(self):
        z = gaussian_matrix(SeededRng(0), 48, 2304)
        breakdown, grad = regularizer.mer_loss_grad(z, MerConfig())
        assert np.isfinite(breakdown.combined)
        assert grad.shape == z.shape


class TestEntropyDecomposition:
    def test_identity_holds(self):
        z = random_batch(SeededRng(10), 40, 6)
        parts = regularizer.entropy_decomposition(z, 1e-4)
        assert parts.ld_entropy == pytest.approx(parts.marginal_term + parts.spectral_term, abs=1e-8)

    def test_matches_covariance_logdet(self):
        z = random_batch(SeededRng(11), 30, 4)
        parts = regularizer.entropy_decomposition(z, 1e-4)
        assert parts.ld_entropy == pytest.approx(np.linalg.slogdet(np.cov(z, rowvar=False))[1], abs=1e-9)

    def test_needs_more_rows_than_columns(self):
        with pytest.raises(NotPositiveDefiniteError):
            regularizer.entropy_decomposition(gaussian_matrix(SeededRng(0), 4, 6), 1e-4)
