import numpy as np
import numpy.testing as npt
import pytest

from kopi.errors import InvalidParameterError, NumericalConditioningError
from kopi.knockoffs import (
    fit_gaussian_model,
    joint_target_covariance,
    model_from_covariance,
    sample_gaussian_knockoffs,
    sample_sequential_knockoffs,
    shrunk_correlation,
)
from kopi.lasso import LassoCVConfig
from kopi.rng import stream
from kopi.simgen import gen_toeplitz_design

SEQ_CFG = LassoCVConfig(folds=3, grid_size=8, tol=1e-4, max_iter=2_000)


class TestModelFromCovariance:
    def test_identity(self):
        model = model_from_covariance(np.eye(3))
        npt.assert_array_equal(model.s_vec, np.ones(3))
        npt.assert_allclose(model.cond_mean_map, np.zeros((3, 3)))
        cond = model.cond_cov_factor.T @ model.cond_cov_factor
        npt.assert_allclose(cond, np.eye(3), atol=1e-12)

    def test_half_correlation(self):
        sigma = np.array([[1.0, 0.5], [0.5, 1.0]])
        model = model_from_covariance(sigma)
        npt.assert_allclose(model.s_vec, [1.0, 1.0])
        cond = model.cond_cov_factor.T @ model.cond_cov_factor
        # 2S - S Sigma^-1 S for s = 1: eigenvalues 4/3 and 0
        eig = np.linalg.eigvalsh(cond)
        npt.assert_allclose(eig, [0.0, 4 / 3], atol=1e-12)

    def test_equicorrelated_point_nine(self):
        sigma = np.array([[1.0, 0.9], [0.9, 1.0]])
        model = model_from_covariance(sigma)
        npt.assert_allclose(model.s_vec, [0.2, 0.2], atol=1e-12)

    def test_psd_guard(self):
        cond = True
        sigma = np.array([[1.0, 0.999999], [0.999999, 1.0]])
        model = model_from_covariance(sigma)  # still PSD, just tiny lambda_min
        assert cond and model.s_vec[0] == pytest.approx(2e-6, rel=1e-3)

    def test_singular_rejected(self):
        sigma = np.ones((2, 2))
        with pytest.raises(NumericalConditioningError):
            model_from_covariance(sigma)

    def test_asymmetric_rejected(self):
        with pytest.raises(InvalidParameterError):
            model_from_covariance(np.array([[1.0, 0.2], [0.3, 1.0]]))


class TestShrunkCorrelation:
    def test_unit_diagonal(self):
        x = gen_toeplitz_design(200, 6, 0.5, stream(1))
        corr = shrunk_correlation(x)
        npt.assert_allclose(np.diag(corr), np.ones(6), atol=1e-12)

    def test_invertible_when_p_exceeds_n(self):
        x = stream(2).standard_normal((20, 40))
        corr = shrunk_correlation(x)
        assert np.linalg.eigvalsh(corr)[0] > 0

    def test_close_to_truth_at_large_n(self):
        rho = 0.5
        x = gen_toeplitz_design(50_000, 4, rho, stream(3))
        corr = shrunk_correlation(x)
        idx = np.arange(4)
        target = rho ** np.abs(idx[:, None] - idx[None, :])
        assert np.max(np.abs(corr - target)) < 0.02


class TestGaussianSampling:
    def test_identity_model_gives_independent_copies(self):
        x = gen_toeplitz_design(30_000, 3, 0.0, stream(4))
        model = model_from_covariance(np.eye(3))
        xt = sample_gaussian_knockoffs(x, model, stream(5)).xtilde
        for j in range(3):
            r = np.corrcoef(x[:, j], xt[:, j])[0, 1]
            assert abs(r) < 0.03

    def test_joint_covariance_matches_target(self):
        x = gen_toeplitz_design(100_000, 4, 0.5, stream(6))
        model = fit_gaussian_model(x)
        xt = sample_gaussian_knockoffs(x, model, stream(7)).xtilde
        joint = np.hstack([x, xt])
        emp = joint.T @ joint / joint.shape[0]
        target = joint_target_covariance(model)
        assert np.linalg.norm(emp - target) < 0.05

    def test_deterministic_given_stream(self):
        x = gen_toeplitz_design(100, 5, 0.3, stream(8))
        model = fit_gaussian_model(x)
        a = sample_gaussian_knockoffs(x, model, stream(9)).xtilde
        b = sample_gaussian_knockoffs(x, model, stream(9)).xtilde
        npt.assert_array_equal(a, b)

    def test_wrong_width_rejected(self):
        x = gen_toeplitz_design(50, 4, 0.2, stream(10))
        model = model_from_covariance(np.eye(3))
        with pytest.raises(InvalidParameterError):
            sample_gaussian_knockoffs(x, model, stream(11))


class TestSequentialSampler:
    def test_identity_permutation_reconstructs_x(self):
        x = gen_toeplitz_design(60, 5, 0.4, stream(12))
        draw = sample_sequential_knockoffs(
            x, SEQ_CFG, stream(13), permutation=np.arange(5)
        )
        npt.assert_allclose(draw.xtilde, x, atol=1e-12)
        assert draw.method == "sequential"

    def test_column_mean_linearity(self):
        # column mean of each knockoff = fit mean + permuted residual mean;
        # on centered data both parts have zero mean, so the sum vanishes
        x = gen_toeplitz_design(50, 4, 0.3, stream(14))
        perm = np.array([2, 0, 3, 1])
        draw = sample_sequential_knockoffs(x, SEQ_CFG, stream(15), permutation=perm)
        npt.assert_allclose(draw.xtilde.mean(axis=0), np.zeros(4), atol=1e-10)

    def test_deterministic_given_stream(self):
        x = gen_toeplitz_design(40, 4, 0.2, stream(17))
        a = sample_sequential_knockoffs(x, SEQ_CFG, stream(18)).xtilde
        b = sample_sequential_knockoffs(x, SEQ_CFG, stream(18)).xtilde
        npt.assert_array_equal(a, b)

    def test_bad_permutation_rejected(self):
        x = gen_toeplitz_design(30, 3, 0.1, stream(19))
        with pytest.raises(InvalidParameterError):
            sample_sequential_knockoffs(
                x, SEQ_CFG, stream(20), permutation=np.array([0, 0, 2])
            )

    def test_needs_three_rows(self):
        with pytest.raises(InvalidParameterError):
            sample_sequential_knockoffs(
                np.ones((2, 3)), SEQ_CFG, stream(21)
            )
