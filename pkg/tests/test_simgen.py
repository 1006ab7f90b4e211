import numpy as np
import numpy.testing as npt
import pytest

from kopi.errors import (
    DegenerateSignalError,
    DegenerateSupportError,
    InvalidParameterError,
)
from kopi.rng import stream
from kopi.simgen import (
    SimConfig,
    draw_support,
    gen_global_null_response,
    gen_response,
    gen_toeplitz_design,
    save_dataset_csv,
    simulate,
    simulate_global_null,
)


class TestSimConfig:
    def test_valid(self):
        SimConfig(n=10, p=5, rho=0.5, sparsity=0.2, snr=1.0, seed=0)

    @pytest.mark.parametrize(
        "kwargs",
        [
            dict(n=1),
            dict(p=1),
            dict(rho=1.0),
            dict(rho=-0.1),
            dict(sparsity=0.0),
            dict(sparsity=1.5),
            dict(snr=0.0),
        ],
    )
    def test_invalid(self, kwargs):
        base = dict(n=10, p=5, rho=0.5, sparsity=0.2, snr=1.0, seed=0)
        base.update(kwargs)
        with pytest.raises(InvalidParameterError):
            SimConfig(**base)

    def test_sweep_param_replacement(self):
        cfg = SimConfig(n=10, p=5, rho=0.5, sparsity=0.2, snr=1.0, seed=0)
        assert cfg.with_param("rho", 0.7).rho == 0.7
        assert cfg.with_param("n", 20.0).n == 20
        with pytest.raises(InvalidParameterError):
            cfg.with_param("alpha", 0.1)


class TestToeplitzDesign:
    def test_independent_case_identity_covariance(self):
        x = gen_toeplitz_design(40_000, 4, 0.0, stream(1))
        cov = x.T @ x / x.shape[0]
        npt.assert_allclose(cov, np.eye(4), atol=0.03)

    def test_lag_two_correlation(self):
        x = gen_toeplitz_design(50_000, 4, 0.5, stream(2))
        cov = x.T @ x / x.shape[0]
        assert abs(cov[0, 2] - 0.25) < 0.02

    def test_target_matrix_shape(self):
        rho = 0.5
        idx = np.arange(3)
        target = rho ** np.abs(idx[:, None] - idx[None, :])
        npt.assert_allclose(
            target, [[1, 0.5, 0.25], [0.5, 1, 0.5], [0.25, 0.5, 1]]
        )

    def test_covariance_fidelity(self):
        rho = 0.7
        x = gen_toeplitz_design(100_000, 6, rho, stream(3))
        cov = x.T @ x / x.shape[0]
        idx = np.arange(6)
        target = rho ** np.abs(idx[:, None] - idx[None, :])
        assert np.max(np.abs(cov - target)) < 0.02

    def test_columns_centered(self):
        x = gen_toeplitz_design(500, 8, 0.3, stream(4))
        assert np.max(np.abs(x.mean(axis=0))) < 1e-10

    def test_standardize_flag(self):
        x = gen_toeplitz_design(300, 5, 0.4, stream(5), standardize=True)
        npt.assert_allclose(np.mean(x * x, axis=0), np.ones(5), atol=1e-12)

    def test_rho_domain(self):
        with pytest.raises(InvalidParameterError):
            gen_toeplitz_design(10, 3, 1.0, stream(6))


class TestDrawSupport:
    def test_full_support(self):
        beta = draw_support(7, 1.0, stream(1))
        npt.assert_array_equal(beta, np.ones(7))

    def test_exact_count(self):
        beta = draw_support(500, 0.1, stream(2))
        assert int(beta.sum()) == 50
        assert set(np.unique(beta)) <= {0.0, 1.0}

    def test_floor_rule(self):
        assert int(draw_support(7, 0.27, stream(3)).sum()) == 1

    def test_degenerate(self):
        with pytest.raises(DegenerateSupportError):
            draw_support(5, 0.1, stream(4))

    def test_deterministic(self):
        npt.assert_array_equal(
            draw_support(50, 0.3, stream(5)), draw_support(50, 0.3, stream(5))
        )


class TestGenResponse:
    def test_snr_identity_exact(self):
        x = gen_toeplitz_design(200, 6, 0.2, stream(1))
        beta = draw_support(6, 0.5, stream(2))
        y, sigma = gen_response(x, beta, 2.0, stream(3))
        eps = (y - x @ beta) / sigma
        realized = np.linalg.norm(x @ beta) / (sigma * np.linalg.norm(eps))
        assert abs(realized - 2.0) < 1e-12

    def test_sigma_formula_recomputed(self):
        x = gen_toeplitz_design(100, 4, 0.0, stream(4))
        beta = np.array([1.0, 0.0, 1.0, 0.0])
        y, sigma = gen_response(x, beta, 3.0, stream(5))
        eps = stream(5).standard_normal(100)  # same stream, same draw
        expected = np.linalg.norm(x @ beta) / (3.0 * np.linalg.norm(eps))
        assert sigma == expected
        npt.assert_allclose(y, x @ beta + sigma * eps)

    def test_noiseless_limit(self):
        x = gen_toeplitz_design(50, 3, 0.0, stream(6))
        beta = np.array([1.0, 1.0, 0.0])
        y, sigma = gen_response(x, beta, 1e12, stream(7))
        assert sigma < 1e-10
        npt.assert_allclose(y, x @ beta, atol=1e-8)

    def test_empty_signal_rejected(self):
        x = gen_toeplitz_design(50, 3, 0.0, stream(8))
        with pytest.raises(DegenerateSignalError):
            gen_response(x, np.zeros(3), 2.0, stream(9))

    def test_global_null_helper(self):
        x = gen_toeplitz_design(50, 3, 0.0, stream(10))
        y, sigma = gen_global_null_response(x, stream(11))
        assert sigma == 1.0 and y.shape == (50,)


class TestSimulate:
    def test_bit_identical_for_same_config(self):
        cfg = SimConfig(n=80, p=10, rho=0.4, sparsity=0.2, snr=2.0, seed=123)
        a, b = simulate(cfg), simulate(cfg)
        npt.assert_array_equal(a.design, b.design)
        npt.assert_array_equal(a.response, b.response)
        npt.assert_array_equal(a.support, b.support)
        assert a.noise_scale == b.noise_scale

    def test_support_size(self):
        cfg = SimConfig(n=50, p=40, rho=0.2, sparsity=0.25, snr=1.5, seed=7)
        ds = simulate(cfg)
        assert len(ds.support) == 10
        assert ds.support.min() >= 0 and ds.support.max() < 40

    def test_global_null_dataset(self):
        ds = simulate_global_null(60, 12, 0.3, seed=5)
        assert len(ds.support) == 0
        assert ds.noise_scale == 1.0
        assert np.max(np.abs(ds.design.mean(axis=0))) < 1e-10


class TestCsvExport:
    def test_round_trip_via_loader(self, tmp_path):
        from kopi.cli import load_dataset

        cfg = SimConfig(n=25, p=4, rho=0.3, sparsity=0.5, snr=2.0, seed=3)
        ds = simulate(cfg)
        csv_path, sidecar = save_dataset_csv(ds, tmp_path / "data.csv")
        x, y, names = load_dataset(csv_path)
        assert names == ["x1", "x2", "x3", "x4"]
        npt.assert_allclose(x, ds.design, atol=1e-15)
        npt.assert_allclose(y, ds.response - ds.response.mean(), atol=1e-15)
        loaded_support = [int(v) for v in open(sidecar).read().split()]
        npt.assert_array_equal(loaded_support, ds.support)
