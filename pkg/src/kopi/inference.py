"""Selection rules with guarantees built on calibrated threshold families.

The post-hoc bound counts, for the best k, (k - 1) plus the selected scores
at or above t_k; with a family whose joint error rate is controlled at
alpha, V(S)/|S| upper-bounds the false discovery proportion of every S
simultaneously with probability at least 1 - alpha. Scores exactly equal to
a threshold count toward the bound: the joint error event uses a strict
inequality, so only scores strictly below t_k are certified discoveries.
The main selector returns the largest set whose bound stays below q; three
baseline selectors (plain knockoff filter, averaged e-values, quantile
aggregation + step-up) share the module.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidParameterError
from .jer import ThresholdFamily
from .pistats import knockoff_threshold, quantile_aggregate

# slack for integer-vs-float comparisons such as V <= q * m
_REL_EPS = 1e-9


@dataclass
class SelectionResult:
    """Selected indices plus the bound and provenance needed to reproduce them."""

    method: str
    q: float
    selected: list[int]
    fdp_bound: float | None = None
    alpha: float | None = None
    provenance: dict = field(default_factory=dict)

    @property
    def size(self) -> int:
        return len(self.selected)

    def to_dict(self) -> dict:
        return {
            "method": self.method,
            "q": self.q,
            "alpha": self.alpha,
            "selected": [int(i) for i in self.selected],
            "fdp_bound": self.fdp_bound,
            "seeds": self.provenance.get("seeds", {}),
            "sizes": self.provenance.get("sizes", {}),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


def _as_pi(pi) -> np.ndarray:
    return np.asarray(getattr(pi, "values", pi), dtype=float)


def fdp_bound_v(pi, family: ThresholdFamily, subset) -> int:
    """min over k of (k - 1) + #{i in S : pi_i >= t_k}."""
    values = _as_pi(pi)
    subset = np.asarray(sorted(subset), dtype=np.intp)
    if subset.size == 0:
        return 0
    if subset.min() < 0 or subset.max() >= values.shape[0]:
        raise InvalidParameterError("subset indices out of range")
    t = family.thresholds
    counts = (values[subset][None, :] >= t[:, None]).sum(axis=1)
    return int((np.arange(t.shape[0]) + counts).min())


def select_kopi(
    pi,
    family: ThresholdFamily,
    q: float,
    alpha: float | None = None,
    provenance: dict | None = None,
) -> SelectionResult:
    """Largest set S with V(S) <= q |S|.

    For each size m the optimal candidate is the m smallest scores (the bound
    is coordinate-wise monotone in pi), so a descending scan over m suffices.
    Ties in pi break by ascending index.
    """
    if not 0.0 < q < 1.0:
        raise InvalidParameterError(f"q must be in (0, 1), got {q}")
    values = _as_pi(pi)
    p = values.shape[0]
    order = np.argsort(values, kind="stable")
    sorted_pi = values[order]
    t = family.thresholds
    k_offsets = np.arange(t.shape[0])
    # strictly-below counts per threshold over the whole sorted vector
    below = np.searchsorted(sorted_pi, t, side="left")
    for m in range(p, 0, -1):
        v = int((k_offsets + (m - np.minimum(m, below))).min())
        if v <= q * m + _REL_EPS:
            selected = np.sort(order[:m])
            return SelectionResult(
                method="kopi",
                q=q,
                selected=[int(i) for i in selected],
                fdp_bound=v / m,
                alpha=alpha,
                provenance=provenance or {},
            )
    return SelectionResult(
        method="kopi",
        q=q,
        selected=[],
        fdp_bound=None,
        alpha=alpha,
        provenance=provenance or {},
    )


def select_vanilla(w, q: float, strict: bool = False) -> SelectionResult:
    """Plain knockoff filter: keep W at or above the data-driven threshold.

    The threshold is drawn from the candidate set {|W_j|}, so the boundary
    point is included by default; ``strict`` switches to a > comparison.
    """
    w = np.asarray(getattr(w, "values", w), dtype=float)
    t = knockoff_threshold(w, q)
    if math.isinf(t):
        selected: list[int] = []
    else:
        mask = w > t if strict else w >= t
        selected = [int(i) for i in np.flatnonzero(mask)]
    return SelectionResult(method="vanilla", q=q, selected=selected)


def select_ebh(evalue_matrix: np.ndarray, q: float) -> SelectionResult:
    """e-BH on draw-averaged e-values.

    Sort the averages descending and keep the k-hat largest, where k-hat is
    the largest k with e_(k) >= p / (q k).
    """
    if not 0.0 < q < 1.0:
        raise InvalidParameterError(f"q must be in (0, 1), got {q}")
    matrix = np.atleast_2d(np.asarray(evalue_matrix, dtype=float))
    e_bar = matrix.mean(axis=0)
    p = e_bar.shape[0]
    order = np.argsort(-e_bar, kind="stable")
    ranks = np.arange(1, p + 1)
    ok = e_bar[order] * q * ranks >= p - _REL_EPS
    hits = np.flatnonzero(ok)
    if hits.size == 0:
        return SelectionResult(method="ebh", q=q, selected=[])
    k_hat = int(hits[-1]) + 1
    return SelectionResult(
        method="ebh",
        q=q,
        selected=[int(i) for i in np.sort(order[:k_hat])],
    )


def benjamini_hochberg(pvalues: np.ndarray, q: float) -> np.ndarray:
    """Step-up rule: reject the k-hat smallest with p_(k) <= q k / p."""
    if not 0.0 < q < 1.0:
        raise InvalidParameterError(f"q must be in (0, 1), got {q}")
    pvalues = np.asarray(pvalues, dtype=float)
    p = pvalues.shape[0]
    order = np.argsort(pvalues, kind="stable")
    ranks = np.arange(1, p + 1)
    ok = pvalues[order] <= q * ranks / p + _REL_EPS
    hits = np.flatnonzero(ok)
    if hits.size == 0:
        return np.empty(0, dtype=np.intp)
    return np.sort(order[: int(hits[-1]) + 1])


def select_ako(pi_matrix: np.ndarray, gamma: float, q: float) -> SelectionResult:
    """Quantile-aggregate the per-draw scores, then run the step-up rule."""
    matrix = np.atleast_2d(np.asarray(pi_matrix, dtype=float))
    aggregated = quantile_aggregate(matrix, gamma)
    selected = benjamini_hochberg(aggregated, q)
    return SelectionResult(
        method="ako", q=q, selected=[int(i) for i in selected]
    )
