"""Per-variable evidence scores derived from signed knockoff statistics.

A variable with W_j > 0 gets the score (1 + #{k : W_k <= -W_j}) / p, i.e. one
plus the number of at-least-as-extreme negative statistics, rescaled; a
variable with W_j <= 0 gets 1. Small scores mean strong evidence. The module
also provides the data-dependent selection threshold for the plain knockoff
filter, the e-value transform, and the column-wise aggregation schemes used
to combine scores across independent knockoff draws.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import InvalidInputError, InvalidParameterError

AGGREGATION_KINDS = ("harmonic", "arithmetic", "geometric", "quantile")


@dataclass
class PiStatistics:
    """Evidence scores in (0, 1], one per variable."""

    values: np.ndarray

    @property
    def p(self) -> int:
        return self.values.shape[0]


@dataclass
class EValues:
    """Nonnegative e-values together with the threshold that produced them."""

    values: np.ndarray
    threshold_used: float


@dataclass(frozen=True)
class AggregationScheme:
    """Column-wise reduction of per-draw scores; ``gamma`` applies to quantile only."""

    kind: str
    gamma: float = 0.5

    def __post_init__(self):
        if self.kind not in AGGREGATION_KINDS:
            raise InvalidParameterError(
                f"unknown aggregation kind {self.kind!r}; expected one of {AGGREGATION_KINDS}"
            )
        if not 0.0 < self.gamma <= 1.0:
            raise InvalidParameterError(f"gamma must be in (0, 1], got {self.gamma}")


def _as_w(w) -> np.ndarray:
    w = np.asarray(getattr(w, "values", w), dtype=float)
    if w.ndim != 1:
        raise InvalidInputError("W must be a 1-D vector")
    if not np.all(np.isfinite(w)):
        raise InvalidInputError("W contains non-finite entries")
    return w


def pi_from_w(w) -> PiStatistics:
    """Direct evaluation of the defining formula (quadratic in p).

    Ties W_k == -W_j count toward the numerator. Entries with W_j <= 0,
    including exact zeros, score 1.
    """
    w = _as_w(w)
    p = w.shape[0]
    out = np.ones(p)
    for j in np.flatnonzero(w > 0):
        out[j] = (1 + np.count_nonzero(w <= -w[j])) / p
    return PiStatistics(out)


def sign_process_pi(w) -> PiStatistics:
    """Same scores computed in O(p log p) via the cumulative sign process.

    Sort by decreasing |W| (ties broken by ascending index), count minus
    signs seen so far; a plus at sorted position k scores (1 + count) / p.
    Matches :func:`pi_from_w` exactly whenever the |W| are distinct.
    """
    w = _as_w(w)
    p = w.shape[0]
    order = np.argsort(-np.abs(w), kind="stable")
    neg = w[order] <= 0
    seen_before = np.cumsum(neg) - neg
    scores = np.where(neg, 1.0, (1.0 + seen_before) / p)
    out = np.empty(p)
    out[order] = scores
    return PiStatistics(out)


def knockoff_threshold(w, q: float) -> float:
    """Smallest candidate t with (1 + #{W <= -t}) / max(1, #{W >= t}) <= q.

    Candidates are the nonzero |W_j|; returns +inf when no candidate
    qualifies (empty selection).
    """
    if not 0.0 < q < 1.0:
        raise InvalidParameterError(f"q must be in (0, 1), got {q}")
    w = _as_w(w)
    nonzero = w[w != 0]
    if nonzero.size == 0:
        return math.inf
    candidates = np.unique(np.abs(nonzero))
    neg_mag = np.sort(np.abs(w[w < 0]))
    pos_val = np.sort(w[w > 0])
    n_neg_ge = neg_mag.size - np.searchsorted(neg_mag, candidates, side="left")
    n_pos_ge = pos_val.size - np.searchsorted(pos_val, candidates, side="left")
    ratio = (1.0 + n_neg_ge) / np.maximum(1, n_pos_ge)
    ok = ratio <= q
    if not ok.any():
        return math.inf
    return float(candidates[np.argmax(ok)])


def evalues_from_w(w, q_e: float) -> EValues:
    """e_j = p * 1{W_j >= T} / (1 + #{W_k <= -T}) at T = knockoff_threshold(w, q_e)."""
    w = _as_w(w)
    p = w.shape[0]
    t = knockoff_threshold(w, q_e)
    if math.isinf(t):
        return EValues(np.zeros(p), t)
    m = int(np.count_nonzero(w <= -t))
    return EValues(np.where(w >= t, p / (1.0 + m), 0.0), t)


def quantile_aggregate(matrix: np.ndarray, gamma: float) -> np.ndarray:
    """min(1, q_gamma / gamma) with q_gamma the ceil(gamma * D)-th order statistic."""
    if not 0.0 < gamma <= 1.0:
        raise InvalidParameterError(f"gamma must be in (0, 1], got {gamma}")
    matrix = np.asarray(matrix, dtype=float)
    d = matrix.shape[0]
    k = int(math.ceil(gamma * d))
    ordered = np.sort(matrix, axis=0)
    return np.minimum(1.0, ordered[k - 1] / gamma)


def aggregate(stat_matrix: np.ndarray, scheme: AggregationScheme) -> np.ndarray:
    """Reduce draws (axis 0) to one score per variable.

    harmonic: D / sum(1/x); arithmetic: mean; geometric: exp(mean(log x));
    quantile: min(1, q_gamma / gamma). Harmonic and geometric require
    strictly positive inputs.
    """
    matrix = np.asarray(stat_matrix, dtype=float)
    if matrix.ndim < 2 or matrix.shape[0] < 1:
        raise InvalidParameterError("stat_matrix must have shape (D, ...) with D >= 1")
    d = matrix.shape[0]
    if scheme.kind == "harmonic":
        if np.any(matrix <= 0):
            raise InvalidInputError("harmonic aggregation requires positive entries")
        if d == 1:
            return matrix[0].copy()  # exact identity, no 1/(1/x) ulp loss
        return d / np.sum(1.0 / matrix, axis=0)
    if scheme.kind == "arithmetic":
        return matrix.mean(axis=0)
    if scheme.kind == "geometric":
        if np.any(matrix <= 0):
            raise InvalidInputError("geometric aggregation requires positive entries")
        if d == 1:
            return matrix[0].copy()
        return np.exp(np.mean(np.log(matrix), axis=0))
    return quantile_aggregate(matrix, scheme.gamma)
