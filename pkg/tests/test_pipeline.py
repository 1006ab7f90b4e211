import logging

import numpy as np
import numpy.testing as npt
import pytest

from kopi.errors import InvalidParameterError
from kopi.jer import default_k_max
from kopi.knockoffs import model_from_covariance, toeplitz_correlation
from kopi.pipeline import (
    RunConfig,
    calibration_for,
    calibrations_for_selectors,
    compute_draw_statistics,
    evaluate_selector,
    scheme_for_selector,
)
from kopi.pistats import AggregationScheme, aggregate, pi_from_w
from kopi.rng import stream
from kopi.simgen import SimConfig, simulate

CFG = RunConfig(
    d_draws=3,
    b_null=300,
    b_prime=40,
    folds=3,
    grid_size=6,
    methods=("kopi", "vanilla", "ebh", "ako"),
)
DATA = simulate(SimConfig(n=90, p=20, rho=0.3, sparsity=0.25, snr=3.0, seed=2))


@pytest.fixture(scope="module")
def stats():
    return compute_draw_statistics(DATA.design, DATA.response, CFG, stream(5))


class TestRunConfig:
    def test_defaults_resolve(self):
        cfg = RunConfig()
        assert cfg.resolved_q_e() == cfg.q / 2
        assert cfg.resolved_k_max(500) == default_k_max(500) == 10
        assert RunConfig(q_e=0.2).resolved_q_e() == 0.2
        assert RunConfig(k_max=3).resolved_k_max(500) == 3
        assert RunConfig(k_max=99).resolved_k_max(10) == 10

    @pytest.mark.parametrize(
        "kwargs",
        [
            dict(d_draws=0),
            dict(alpha=0.0),
            dict(q=1.0),
            dict(q_e=0.0),
            dict(knockoff_method="deep"),
            dict(ako_gamma=0.0),
        ],
    )
    def test_validation(self, kwargs):
        with pytest.raises(InvalidParameterError):
            RunConfig(**kwargs)

    def test_scheme_for_selector(self):
        cfg = RunConfig(scheme=AggregationScheme("geometric"))
        assert scheme_for_selector("kopi", cfg).kind == "geometric"
        assert scheme_for_selector("kopi-harmonic", cfg).kind == "harmonic"
        assert scheme_for_selector("vanilla", cfg) is None


class TestDrawStatistics:
    def test_shapes_and_pi_consistency(self, stats):
        assert stats.w_matrix.shape == (3, 20)
        assert stats.pi_matrix.shape == (3, 20)
        for d in range(3):
            npt.assert_array_equal(
                stats.pi_matrix[d], pi_from_w(stats.w_matrix[d]).values
            )

    def test_deterministic(self, stats):
        again = compute_draw_statistics(DATA.design, DATA.response, CFG, stream(5))
        npt.assert_array_equal(stats.w_matrix, again.w_matrix)
        npt.assert_array_equal(stats.lambdas, again.lambdas)

    def test_share_lambda_reuses_first(self):
        cfg = RunConfig(
            d_draws=3,
            b_null=300,
            b_prime=40,
            folds=3,
            grid_size=6,
            share_lambda=True,
        )
        shared = compute_draw_statistics(DATA.design, DATA.response, cfg, stream(5))
        assert len(set(shared.lambdas.tolist())) == 1

    def test_prebuilt_model_changes_draws(self, stats):
        model = model_from_covariance(toeplitz_correlation(20, 0.3))
        oracle = compute_draw_statistics(
            DATA.design, DATA.response, CFG, stream(5), model=model
        )
        assert not np.array_equal(oracle.w_matrix, stats.w_matrix)

    def test_sequential_method_runs(self):
        cfg = RunConfig(
            d_draws=1,
            knockoff_method="sequential",
            b_null=100,
            b_prime=20,
            folds=3,
            grid_size=5,
            cv_tol=1e-3,
        )
        small = simulate(SimConfig(n=50, p=8, rho=0.2, sparsity=0.5, snr=3.0, seed=9))
        out = compute_draw_statistics(small.design, small.response, cfg, stream(11))
        assert out.w_matrix.shape == (1, 8)
        assert out.knockoff_method == "sequential"


class TestCalibrationFor:
    def test_cache_hit_matches_fresh(self, tmp_path, caplog):
        cfg = RunConfig(d_draws=2, b_null=200, b_prime=30)
        scheme = AggregationScheme("harmonic")
        fresh = calibration_for(12, cfg, scheme, calib_seed=7)
        with caplog.at_level(logging.INFO, logger="kopi"):
            miss = calibration_for(12, cfg, scheme, calib_seed=7, cache_dir=tmp_path)
            hit = calibration_for(12, cfg, scheme, calib_seed=7, cache_dir=tmp_path)
        assert "null cache miss" in caplog.text and "null cache hit" in caplog.text
        for other in (miss, hit):
            assert other.lam == fresh.lam
            npt.assert_array_equal(
                other.family.thresholds, fresh.family.thresholds
            )

    def test_distinct_schemes_distinct_files(self, tmp_path):
        cfg = RunConfig(
            d_draws=2,
            b_null=200,
            b_prime=30,
            methods=("kopi-harmonic", "kopi-quantile", "vanilla"),
        )
        calibs = calibrations_for_selectors(10, cfg, calib_seed=3, cache_dir=tmp_path)
        assert len(calibs) == 2
        assert len(list(tmp_path.glob("*.kopi"))) == 2

    def test_no_kopi_methods_no_calibration(self):
        cfg = RunConfig(methods=("vanilla", "ebh"))
        assert calibrations_for_selectors(10, cfg, calib_seed=1) == {}


class TestEvaluateSelector:
    def test_all_standard_selectors(self, stats):
        calibs = calibrations_for_selectors(20, CFG, calib_seed=13)
        for name in CFG.methods:
            result = evaluate_selector(name, stats, CFG, calibs)
            assert result.method == name
            assert all(0 <= i < 20 for i in result.selected)

    def test_kopi_provenance_sizes(self, stats):
        calibs = calibrations_for_selectors(20, CFG, calib_seed=13)
        result = evaluate_selector(
            "kopi", stats, CFG, calibs, seeds={"master": 13}
        )
        doc = result.to_dict()
        assert doc["sizes"]["D"] == 3
        assert doc["sizes"]["B"] == CFG.b_null
        assert doc["seeds"] == {"master": 13}

    def test_kopi_matches_manual_composition(self, stats):
        calibs = calibrations_for_selectors(20, CFG, calib_seed=13)
        from kopi.inference import select_kopi

        pibar = aggregate(stats.pi_matrix, CFG.scheme)
        manual = select_kopi(pibar, calibs[CFG.scheme].family, CFG.q)
        auto = evaluate_selector("kopi", stats, CFG, calibs)
        assert manual.selected == auto.selected

    def test_unknown_selector(self, stats):
        with pytest.raises(InvalidParameterError):
            evaluate_selector("closed-testing", stats, CFG, {})
