"""Shared orchestration: draw loop, per-draw statistics, calibration reuse.

Both the benchmark harness and the CLI run the same sequence: fit a knockoff
model, draw D knockoff copies with independent child streams, tune the Lasso
penalty per draw (or share the first draw's penalty), compute the signed
statistics and their evidence scores, then hand everything to the selectors.
Calibration depends only on (p, sizes, scheme, pairing, seed), never on the
data, so it is computed once per configuration and the expensive null matrix
is cached on disk.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import InvalidParameterError
from .inference import (
    SelectionResult,
    select_ako,
    select_ebh,
    select_kopi,
    select_vanilla,
)
from .jer import (
    CalibrationResult,
    NullCacheKey,
    NullPiMatrix,
    aggregated_null_matrix,
    aggregated_template,
    calibrate,
    default_k_max,
    load_null_cache,
    write_null_cache,
)
from .knockoffs import (
    fit_gaussian_model,
    sample_gaussian_knockoffs,
    sample_sequential_knockoffs,
)
from .lasso import LassoCVConfig, cross_validate_lambda, lcd_statistic
from .pistats import (
    AggregationScheme,
    aggregate,
    evalues_from_w,
    sign_process_pi,
)
from .rng import split, stream

logger = logging.getLogger("kopi")

KNOCKOFF_METHODS = ("gaussian", "sequential")
STANDARD_SELECTORS = (
    "kopi",
    "kopi-harmonic",
    "kopi-arithmetic",
    "kopi-geometric",
    "kopi-quantile",
    "vanilla",
    "ebh",
    "ako",
)


@dataclass(frozen=True)
class RunConfig:
    """Everything one inference run needs besides the data and the streams."""

    d_draws: int = 50
    knockoff_method: str = "gaussian"
    folds: int = 5
    grid_size: int = 20
    cv_tol: float = 1e-4
    fit_tol: float = 1e-8
    max_iter: int = 100_000
    share_lambda: bool = False
    b_null: int = 10_000
    b_prime: int = 1_000
    k_max: int | None = None
    alpha: float = 0.1
    q: float = 0.1
    q_e: float | None = None
    scheme: AggregationScheme = AggregationScheme("harmonic")
    ako_gamma: float = 0.5
    # "sorted" pairs order statistics across draws when aggregating the null
    # matrix; it is the only mode that keeps the empirical FDP of mean-type
    # aggregation at the nominal level in benchmark regimes
    pairing: str = "sorted"
    methods: tuple[str, ...] = ("kopi",)
    # simulations may hand the sampler the known covariate law (the model-X
    # premise); estimation from X is the fallback and the only option on
    # real data
    oracle_covariance: bool = True

    def __post_init__(self):
        if self.d_draws < 1:
            raise InvalidParameterError(f"D must be >= 1, got {self.d_draws}")
        if self.knockoff_method not in KNOCKOFF_METHODS:
            raise InvalidParameterError(
                f"unknown knockoff method {self.knockoff_method!r}"
            )
        if not 0.0 < self.alpha < 1.0:
            raise InvalidParameterError(f"alpha must be in (0, 1), got {self.alpha}")
        if not 0.0 < self.q < 1.0:
            raise InvalidParameterError(f"q must be in (0, 1), got {self.q}")
        if self.q_e is not None and not 0.0 < self.q_e < 1.0:
            raise InvalidParameterError(f"q_e must be in (0, 1), got {self.q_e}")
        if not 0.0 < self.ako_gamma <= 1.0:
            raise InvalidParameterError(
                f"ako_gamma must be in (0, 1], got {self.ako_gamma}"
            )

    def resolved_q_e(self) -> float:
        # the e-value threshold level is a hard-to-set hyperparameter; q/2 by default
        return self.q_e if self.q_e is not None else self.q / 2.0

    def resolved_k_max(self, p: int) -> int:
        if self.k_max is None:
            return default_k_max(p)
        if self.k_max < 1:
            raise InvalidParameterError(f"k_max must be >= 1, got {self.k_max}")
        return min(p, self.k_max)

    def lasso_cv_config(self) -> LassoCVConfig:
        return LassoCVConfig(
            folds=self.folds,
            grid_size=self.grid_size,
            tol=self.cv_tol,
            max_iter=self.max_iter,
        )


def scheme_for_selector(name: str, cfg: RunConfig) -> AggregationScheme | None:
    """Aggregation scheme used by a selector; None for non-aggregating ones."""
    if name == "kopi":
        return cfg.scheme
    if name.startswith("kopi-"):
        kind = name.split("-", 1)[1]
        gamma = cfg.scheme.gamma if kind == "quantile" else 0.5
        return AggregationScheme(kind, gamma)
    return None


@dataclass
class DrawStatistics:
    """Per-draw signed statistics and evidence scores on shared draws."""

    w_matrix: np.ndarray  # (D, p)
    pi_matrix: np.ndarray  # (D, p)
    lambdas: np.ndarray  # (D,) penalty used per draw
    knockoff_method: str

    @property
    def d_draws(self) -> int:
        return self.w_matrix.shape[0]

    @property
    def p(self) -> int:
        return self.w_matrix.shape[1]


def compute_draw_statistics(
    X: np.ndarray,
    y: np.ndarray,
    cfg: RunConfig,
    rng: np.random.Generator,
    model=None,
) -> DrawStatistics:
    """Run the D-draw loop on one dataset (columns of X assumed centered).

    ``model`` short-circuits covariance estimation with a prebuilt Gaussian
    knockoff model (e.g. the known simulation covariance).
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    p = X.shape[1]
    if cfg.knockoff_method != "gaussian":
        model = None
    elif model is None:
        model = fit_gaussian_model(X)
    draw_streams = split(rng, cfg.d_draws)
    w_matrix = np.empty((cfg.d_draws, p))
    pi_matrix = np.empty((cfg.d_draws, p))
    lambdas = np.empty(cfg.d_draws)
    shared_lam: float | None = None
    for d, draw_stream in enumerate(draw_streams):
        ko_rng, cv_rng = split(draw_stream, 2)
        if model is not None:
            xtilde = sample_gaussian_knockoffs(X, model, ko_rng, draw_seed=d).xtilde
        else:
            xtilde = sample_sequential_knockoffs(
                X, cfg.lasso_cv_config(), ko_rng, draw_seed=d
            ).xtilde
        if cfg.share_lambda and shared_lam is not None:
            lam = shared_lam
        else:
            lam = cross_validate_lambda(
                np.hstack([X, xtilde]),
                y,
                folds=cfg.folds,
                grid_size=cfg.grid_size,
                rng=cv_rng,
                tol=cfg.cv_tol,
                max_iter=3_000,
            )
            if cfg.share_lambda:
                shared_lam = lam
        w = lcd_statistic(
            X, xtilde, y, lam, tol=cfg.fit_tol, max_iter=cfg.max_iter
        ).values
        w_matrix[d] = w
        pi_matrix[d] = sign_process_pi(w).values
        lambdas[d] = lam
    return DrawStatistics(
        w_matrix=w_matrix,
        pi_matrix=pi_matrix,
        lambdas=lambdas,
        knockoff_method=cfg.knockoff_method,
    )


def calibration_for(
    p: int,
    cfg: RunConfig,
    scheme: AggregationScheme,
    calib_seed: int,
    cache_dir=None,
) -> CalibrationResult:
    """Calibrated family for one scheme, reusing the cached null matrix.

    The stream layout is identical on cache hits and misses, so the result
    never depends on the cache state.
    """
    k_max = cfg.resolved_k_max(p)
    root = stream(calib_seed)
    null_stream, template_stream = split(root, 2)
    rows = None
    cache_path = None
    key = NullCacheKey(
        p=p,
        b=cfg.b_null,
        d=cfg.d_draws,
        scheme=scheme,
        pairing=cfg.pairing,
        seed=calib_seed,
    )
    if cache_dir is not None:
        cache_path = Path(cache_dir) / key.filename()
        rows = load_null_cache(cache_path, key)
        if rows is None:
            logger.info("null cache miss: %s", cache_path)
        else:
            logger.info("null cache hit: %s", cache_path)
    if rows is None:
        rows = aggregated_null_matrix(
            cfg.d_draws, cfg.b_null, p, scheme, cfg.pairing, null_stream
        ).rows
        if cache_path is not None:
            cache_path.parent.mkdir(parents=True, exist_ok=True)
            write_null_cache(cache_path, rows, key)
            logger.info("null cache written: %s", cache_path)
    null_pi = NullPiMatrix(rows=rows, p=p, sorted_rows=True, seed=calib_seed)
    template = aggregated_template(
        cfg.d_draws, cfg.b_prime, p, k_max, scheme, template_stream
    )
    return calibrate(null_pi, template, cfg.alpha)


def calibrations_for_selectors(
    p: int, cfg: RunConfig, calib_seed: int, cache_dir=None
) -> dict[AggregationScheme, CalibrationResult]:
    """One calibration per distinct scheme among the configured selectors."""
    schemes = []
    for name in cfg.methods:
        scheme = scheme_for_selector(name, cfg)
        if scheme is not None and scheme not in schemes:
            schemes.append(scheme)
    return {
        scheme: calibration_for(p, cfg, scheme, calib_seed, cache_dir=cache_dir)
        for scheme in schemes
    }


def evaluate_selector(
    name: str,
    stats: DrawStatistics,
    cfg: RunConfig,
    calibrations: dict[AggregationScheme, CalibrationResult],
    seeds: dict | None = None,
) -> SelectionResult:
    """Dispatch one selector on shared draw statistics."""
    if name == "vanilla":
        return select_vanilla(stats.w_matrix[0], cfg.q)
    if name == "ebh":
        q_e = cfg.resolved_q_e()
        evalue_matrix = np.stack(
            [evalues_from_w(w, q_e).values for w in stats.w_matrix]
        )
        return select_ebh(evalue_matrix, cfg.q)
    if name == "ako":
        return select_ako(stats.pi_matrix, cfg.ako_gamma, cfg.q)
    scheme = scheme_for_selector(name, cfg)
    if scheme is None:
        raise InvalidParameterError(f"unknown selector {name!r}")
    calib = calibrations[scheme]
    pi_bar = aggregate(stats.pi_matrix, scheme)
    provenance = {
        "seeds": seeds or {},
        "sizes": {
            "D": stats.d_draws,
            "B": cfg.b_null,
            "B_prime": cfg.b_prime,
            "k_max": calib.family.k_max,
            "lambda": calib.lam,
        },
    }
    result = select_kopi(
        pi_bar, calib.family, cfg.q, alpha=cfg.alpha, provenance=provenance
    )
    result.method = name
    return result
