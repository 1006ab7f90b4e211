"""Joint error rate machinery: null score sampling, templates, calibration.

The joint law of the evidence scores under the null is known exactly: it is
generated by i.i.d. Rademacher signs fed through the cumulative sign process.
Sampling that law Monte-Carlo style gives (i) a B x p matrix of null score
vectors used to evaluate the empirical joint error rate of any candidate
threshold family, and (ii) an independent set of draws whose coordinate-wise
quantile curves form the template of candidate families. Calibration picks
the least conservative family whose empirical JER stays at or below alpha.

The multi-draw variant aggregates D independent null matrices column-wise
with the chosen scheme before sorting, and aggregates D independently built
templates curve-by-curve, so calibration operates directly on aggregated
statistics.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .errors import CacheMismatchError, InvalidParameterError
from .pistats import AGGREGATION_KINDS, AggregationScheme, aggregate
from .rng import split

PAIRING_MODES = ("rank", "permuted", "sorted")

# Rows are generated in fixed-size blocks so large (D, B, p) configurations
# stay within memory; the block size is a constant, never a tuning knob,
# because changing it would change how the streams are consumed.
_BLOCK_ROWS = 1024


def default_k_max(p: int) -> int:
    """Family length floor(p / 50), clamped to [1, p]."""
    return min(p, max(1, p // 50))


@dataclass
class NullPiMatrix:
    """B x p matrix of Monte-Carlo null scores; rows sorted when flagged."""

    rows: np.ndarray
    p: int
    sorted_rows: bool
    seed: int | None = None

    @property
    def b(self) -> int:
        return self.rows.shape[0]


@dataclass
class ThresholdFamily:
    """Non-decreasing thresholds t_1 <= ... <= t_kmax in [0, 1]."""

    thresholds: np.ndarray

    def __post_init__(self):
        t = np.asarray(self.thresholds, dtype=float)
        if t.ndim != 1 or t.size == 0:
            raise InvalidParameterError("thresholds must be a nonempty 1-D vector")
        if t[0] < 0.0 or t[-1] > 1.0 or np.any(np.diff(t) < 0):
            raise InvalidParameterError(
                "thresholds must be non-decreasing within [0, 1]"
            )
        self.thresholds = t

    @property
    def k_max(self) -> int:
        return self.thresholds.shape[0]


@dataclass
class Template:
    """B' candidate families, component-wise non-decreasing in the family index."""

    families: np.ndarray  # shape (B', k_max)

    @property
    def b_prime(self) -> int:
        return self.families.shape[0]

    @property
    def k_max(self) -> int:
        return self.families.shape[1]

    def family(self, b_prime: int) -> ThresholdFamily:
        """1-based access: family(b') is the b'/B' candidate."""
        if not 1 <= b_prime <= self.b_prime:
            raise InvalidParameterError(
                f"family index must be in [1, {self.b_prime}], got {b_prime}"
            )
        return ThresholdFamily(self.families[b_prime - 1].copy())


@dataclass
class CalibrationResult:
    """Calibrated family with its level, achieved empirical JER and position."""

    lam: float  # b'_cal / B'; 0.0 when degenerate
    family: ThresholdFamily
    alpha: float
    empirical_jer: float
    degenerate: bool


def rademacher_signs(b: int, p: int, rng: np.random.Generator) -> np.ndarray:
    """b x p matrix of i.i.d. +-1 signs."""
    return rng.integers(0, 2, size=(b, p)) * 2 - 1


def null_pi_from_signs(chi: np.ndarray) -> np.ndarray:
    """Score rows from sign rows: minus gives 1, plus gives (1 + #minus before) / p."""
    chi = np.asarray(chi)
    neg = chi < 0
    seen_before = np.cumsum(neg, axis=1, dtype=np.int64) - neg
    p = chi.shape[1]
    return np.where(neg, 1.0, (1.0 + seen_before) / p)


def sample_null_pi(
    b: int,
    p: int,
    rng: np.random.Generator,
    sort: bool = True,
    seed: int | None = None,
) -> NullPiMatrix:
    """Draw B null score vectors; rows sorted ascending unless ``sort`` is off."""
    if b < 1 or p < 1:
        raise InvalidParameterError(f"need B >= 1 and p >= 1, got B={b}, p={p}")
    rows = null_pi_from_signs(rademacher_signs(b, p, rng))
    if sort:
        rows.sort(axis=1)
    return NullPiMatrix(rows=rows, p=p, sorted_rows=sort, seed=seed)


def empirical_jer(null_pi: NullPiMatrix, family: ThresholdFamily) -> float:
    """Fraction of sorted null rows with some order statistic strictly below t_k."""
    if not null_pi.sorted_rows:
        raise InvalidParameterError("empirical JER requires sorted null rows")
    k_max = family.k_max
    if k_max > null_pi.p:
        raise InvalidParameterError(f"k_max={k_max} exceeds p={null_pi.p}")
    violated = np.any(null_pi.rows[:, :k_max] < family.thresholds, axis=1)
    return float(violated.mean())


def build_template(
    b_prime: int, p: int, k_max: int, rng: np.random.Generator
) -> Template:
    """Template whose b'-th family is the coordinate-wise b'-th order statistic
    of B' freshly drawn sorted null rows, truncated to the first k_max coordinates.

    Using the upper order statistic as the b'/B' quantile makes the families
    non-decreasing in b' exactly.
    """
    if b_prime < 1:
        raise InvalidParameterError(f"B' must be >= 1, got {b_prime}")
    if not 1 <= k_max <= p:
        raise InvalidParameterError(f"k_max must be in [1, p], got {k_max}")
    rows = sample_null_pi(b_prime, p, rng, sort=True).rows
    return Template(families=np.sort(rows[:, :k_max], axis=0))


def calibrate(
    null_pi: NullPiMatrix, template: Template, alpha: float
) -> CalibrationResult:
    """Least conservative family in the template with empirical JER <= alpha.

    Binary search over the family index is exact because the empirical JER is
    non-decreasing along the template. When even the smallest family fails,
    the all-zero family is returned with the degenerate flag set.
    """
    if not 0.0 < alpha < 1.0:
        raise InvalidParameterError(f"alpha must be in (0, 1), got {alpha}")
    cache: dict[int, float] = {}

    def jer_at(b: int) -> float:
        if b not in cache:
            cache[b] = empirical_jer(null_pi, template.family(b))
        return cache[b]

    b_hi = template.b_prime
    if jer_at(1) > alpha:
        return CalibrationResult(
            lam=0.0,
            family=ThresholdFamily(np.zeros(template.k_max)),
            alpha=alpha,
            empirical_jer=0.0,
            degenerate=True,
        )
    lo, hi = 1, b_hi
    while lo < hi:
        mid = (lo + hi + 1) // 2
        if jer_at(mid) <= alpha:
            lo = mid
        else:
            hi = mid - 1
    return CalibrationResult(
        lam=lo / b_hi,
        family=template.family(lo),
        alpha=alpha,
        empirical_jer=jer_at(lo),
        degenerate=False,
    )


def _check_pairing(pairing: str) -> None:
    if pairing not in PAIRING_MODES:
        raise InvalidParameterError(
            f"unknown pairing mode {pairing!r}; expected one of {PAIRING_MODES}"
        )


def aggregated_null_matrix(
    d: int,
    b: int,
    p: int,
    scheme: AggregationScheme,
    pairing: str,
    rng: np.random.Generator,
) -> NullPiMatrix:
    """Aggregate D independent null matrices column-wise, then sort rows.

    Pairing fixes which coordinates are matched across draws: ``rank`` pairs
    each draw's sign-process position j directly; ``permuted`` independently
    permutes every row of every draw first, mimicking score positions that
    vary across draws; ``sorted`` sorts each draw's rows before pairing, so
    coordinate k aggregates the k-th order statistics.
    """
    if d < 1:
        raise InvalidParameterError(f"D must be >= 1, got {d}")
    if b < 1 or p < 1:
        raise InvalidParameterError(f"need B >= 1 and p >= 1, got B={b}, p={p}")
    _check_pairing(pairing)
    streams = split(rng, d)
    out = np.empty((b, p))
    for start in range(0, b, _BLOCK_ROWS):
        count = min(_BLOCK_ROWS, b - start)
        block = np.empty((d, count, p))
        for i, s in enumerate(streams):
            rows = null_pi_from_signs(rademacher_signs(count, p, s))
            if pairing == "permuted":
                rows = s.permuted(rows, axis=1)
            elif pairing == "sorted":
                rows.sort(axis=1)
            block[i] = rows
        out[start : start + count] = aggregate(block, scheme)
    out.sort(axis=1)
    return NullPiMatrix(rows=out, p=p, sorted_rows=True)


def aggregated_template(
    d: int,
    b_prime: int,
    p: int,
    k_max: int,
    scheme: AggregationScheme,
    rng: np.random.Generator,
) -> Template:
    """Aggregate D independently built templates curve-by-curve.

    Every scheme is monotone in each argument, so the aggregated template
    inherits the component-wise monotonicity of its inputs.
    """
    if d < 1:
        raise InvalidParameterError(f"D must be >= 1, got {d}")
    streams = split(rng, d)
    stack = np.stack(
        [build_template(b_prime, p, k_max, s).families for s in streams]
    )
    return Template(families=aggregate(stack, scheme))


def aggregated_calibrate(
    d: int,
    b: int,
    b_prime: int,
    p: int,
    k_max: int,
    scheme: AggregationScheme,
    pairing: str,
    alpha: float,
    rng: np.random.Generator,
    null_rows: np.ndarray | None = None,
) -> CalibrationResult:
    """Calibrate on aggregated null statistics and an aggregated template.

    ``null_rows`` short-circuits the expensive null matrix draw (cache path);
    the stream layout is identical either way, so cached and fresh runs give
    the same calibration.
    """
    null_stream, template_stream = split(rng, 2)
    if null_rows is None:
        null_pi = aggregated_null_matrix(d, b, p, scheme, pairing, null_stream)
    else:
        null_pi = NullPiMatrix(rows=np.asarray(null_rows), p=p, sorted_rows=True)
    template = aggregated_template(d, b_prime, p, k_max, scheme, template_stream)
    return calibrate(null_pi, template, alpha)


# --- null matrix cache -----------------------------------------------------
#
# Binary container: little-endian header followed by row-major float64 data.
# Validity requires an exact header match.

_CACHE_MAGIC = b"KOPI0"
_CACHE_VERSION = 1
_HEADER_FMT = "<5sHIIIBBdq"
_HEADER_SIZE = struct.calcsize(_HEADER_FMT)


@dataclass(frozen=True)
class NullCacheKey:
    """Identity of a cached aggregated null matrix."""

    p: int
    b: int
    d: int
    scheme: AggregationScheme
    pairing: str
    seed: int

    def scheme_id(self) -> int:
        return AGGREGATION_KINDS.index(self.scheme.kind)

    def pairing_id(self) -> int:
        _check_pairing(self.pairing)
        return PAIRING_MODES.index(self.pairing)

    def gamma_field(self) -> float:
        # gamma participates in the identity only for quantile aggregation
        return self.scheme.gamma if self.scheme.kind == "quantile" else 0.0

    def filename(self) -> str:
        gamma = f"_g{self.gamma_field():g}" if self.scheme.kind == "quantile" else ""
        return (
            f"null_p{self.p}_B{self.b}_D{self.d}_{self.scheme.kind}{gamma}"
            f"_{self.pairing}_seed{self.seed}.kopi"
        )


def write_null_cache(path, rows: np.ndarray, key: NullCacheKey) -> None:
    rows = np.ascontiguousarray(rows, dtype="<f8")
    if rows.shape != (key.b, key.p):
        raise InvalidParameterError(
            f"rows shape {rows.shape} does not match key (B={key.b}, p={key.p})"
        )
    header = struct.pack(
        _HEADER_FMT,
        _CACHE_MAGIC,
        _CACHE_VERSION,
        key.p,
        key.b,
        key.d,
        key.scheme_id(),
        key.pairing_id(),
        key.gamma_field(),
        key.seed,
    )
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(rows.tobytes())


def read_null_cache(path) -> tuple[dict, np.ndarray]:
    """Parse a cache file; returns (header fields, rows). Raises on bad format."""
    with open(path, "rb") as fh:
        raw = fh.read(_HEADER_SIZE)
        if len(raw) != _HEADER_SIZE:
            raise CacheMismatchError(f"{path}: truncated header")
        magic, version, p, b, d, scheme_id, pairing_id, gamma, seed = struct.unpack(
            _HEADER_FMT, raw
        )
        if magic != _CACHE_MAGIC or version != _CACHE_VERSION:
            raise CacheMismatchError(f"{path}: bad magic or version")
        data = np.frombuffer(fh.read(), dtype="<f8")
    if data.size != b * p:
        raise CacheMismatchError(f"{path}: payload size mismatch")
    meta = {
        "p": p,
        "b": b,
        "d": d,
        "scheme_id": scheme_id,
        "pairing_id": pairing_id,
        "gamma": gamma,
        "seed": seed,
    }
    return meta, data.reshape(b, p).copy()


def load_null_cache(path, key: NullCacheKey) -> np.ndarray | None:
    """Rows when the header matches the key exactly, else None."""
    try:
        meta, rows = read_null_cache(path)
    except (OSError, CacheMismatchError):
        return None
    expected = {
        "p": key.p,
        "b": key.b,
        "d": key.d,
        "scheme_id": key.scheme_id(),
        "pairing_id": key.pairing_id(),
        "gamma": key.gamma_field(),
        "seed": key.seed,
    }
    if meta != expected:
        return None
    return rows
