"""Knockoff-based variable selection with probabilistic FDP control.

The package draws knockoff copies of a design, scores variables with the
Lasso coefficient-difference statistic, converts scores to per-variable
evidence values, and calibrates threshold families against the exactly-known
null law of those values so that the proportion of false discoveries in the
returned selection is bounded with high probability. Aggregation across
independent knockoff draws removes the run-to-run randomness of single-draw
inference.
"""

from .errors import (
    CacheMismatchError,
    ConfigError,
    DataFormatError,
    DegenerateSignalError,
    DegenerateSupportError,
    InvalidInputError,
    InvalidParameterError,
    KopiError,
    NonConvergenceError,
    NumericalConditioningError,
)
from .inference import (
    SelectionResult,
    benjamini_hochberg,
    fdp_bound_v,
    select_ako,
    select_ebh,
    select_kopi,
    select_vanilla,
)
from .jer import (
    CalibrationResult,
    NullCacheKey,
    NullPiMatrix,
    Template,
    ThresholdFamily,
    aggregated_calibrate,
    aggregated_null_matrix,
    aggregated_template,
    build_template,
    calibrate,
    default_k_max,
    empirical_jer,
    load_null_cache,
    read_null_cache,
    sample_null_pi,
    write_null_cache,
)
from .knockoffs import (
    GaussianKnockoffModel,
    KnockoffDraw,
    fit_gaussian_model,
    model_from_covariance,
    sample_gaussian_knockoffs,
    sample_sequential_knockoffs,
)
from .lasso import (
    LassoCVConfig,
    LassoFit,
    WStatistics,
    cross_validate_lambda,
    fit_lasso,
    lambda_max,
    lcd_statistic,
)
from .pistats import (
    AggregationScheme,
    EValues,
    PiStatistics,
    aggregate,
    evalues_from_w,
    knockoff_threshold,
    pi_from_w,
    quantile_aggregate,
    sign_process_pi,
)
from .rng import split, stream
from .simgen import (
    SimConfig,
    SimulatedDataset,
    draw_support,
    gen_global_null_response,
    gen_response,
    gen_toeplitz_design,
    save_dataset_csv,
    simulate,
    simulate_global_null,
    simulate_with_streams,
)

__version__ = "0.1.0"
