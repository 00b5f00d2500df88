"""Ranking metrics: Spearman rank correlation, NDCG of the top fraction, and their average.

Ties are handled with average ranks everywhere. NDCG uses linear percentile
relevance, a 1/log2(i+1) discount, and k = ceil(fraction * n); prediction ties
are broken by stable input order so results are deterministic.
"""

from __future__ import annotations

import math

import numpy as np

from .errors import ConstantInputError, LengthMismatchError

SPEARMAN = "spearman"
NDCG = "ndcg"
COMBINED = "combined"

METRIC_KINDS = (SPEARMAN, NDCG, COMBINED)


def average_ranks(values) -> np.ndarray:
    """1-based ranks; tied values share the mean of the ranks they span."""
    a = np.asarray(values, dtype=np.float64).ravel()
    n = a.size
    if n == 0:
        return np.zeros(0)
    order = np.argsort(a, kind="stable")
    s = a[order]
    boundaries = np.flatnonzero(s[1:] != s[:-1]) + 1
    starts = np.concatenate(([0], boundaries))
    ends = np.concatenate((boundaries, [n]))
    group_rank = (starts + ends - 1) / 2.0 + 1.0
    ranks = np.empty(n)
    ranks[order] = np.repeat(group_rank, ends - starts)
    return ranks


def _check_pair(x, y):
    a = np.asarray(x, dtype=np.float64).ravel()
    b = np.asarray(y, dtype=np.float64).ravel()
    if a.size != b.size:
        raise LengthMismatchError(f"length mismatch: {a.size} vs {b.size}")
    if a.size < 2:
        raise LengthMismatchError("need at least 2 values")
    return a, b


def pearson(x, y) -> float:
    """Sample Pearson correlation. Raises ConstantInputError if either vector is constant."""
    a, b = _check_pair(x, y)
    if np.all(a == a[0]) or np.all(b == b[0]):
        raise ConstantInputError("correlation undefined for constant input")
    da = a - a.mean()
    db = b - b.mean()
    denom = math.sqrt(float(da @ da) * float(db @ db))
    r = float(da @ db) / denom
    return min(1.0, max(-1.0, r))


def spearman(pred, truth) -> float:
    """Pearson correlation of average ranks (tie-robust)."""
    a, b = _check_pair(pred, truth)
    return pearson(average_ranks(a), average_ranks(b))


def ndcg_top_fraction(pred, truth, fraction: float = 0.2) -> float:
    """NDCG of the top ceil(fraction * n) predicted items.

    Relevance of item i is its truth percentile (average rank - 1)/(n - 1),
    so the best item has relevance 1 and the worst 0.
    """
    a, b = _check_pair(pred, truth)
    if not 0.0 < fraction <= 1.0:
        raise ValueError(f"fraction must be in (0, 1], got {fraction}")
    n = a.size
    rel = (average_ranks(b) - 1.0) / (n - 1.0)
    k = math.ceil(fraction * n)
    # stable argsort of -pred keeps input order among equal predictions
    order = np.argsort(-a, kind="stable")[:k]
    discounts = 1.0 / np.log2(np.arange(2, k + 2, dtype=np.float64))
    dcg = float(rel[order] @ discounts)
    ideal = np.sort(rel)[::-1][:k]
    idcg = float(ideal @ discounts)
    return dcg / idcg


def combined_score(pred, truth, fraction: float = 0.2) -> float:
    """Average of Spearman and top-fraction NDCG; the model-selection score."""
    return 0.5 * (spearman(pred, truth) + ndcg_top_fraction(pred, truth, fraction))


def score(pred, truth, kind: str = COMBINED, fraction: float = 0.2) -> float:
    """Dispatch on metric kind ("spearman" | "ndcg" | "combined")."""
    if kind == SPEARMAN:
        return spearman(pred, truth)
    if kind == NDCG:
        return ndcg_top_fraction(pred, truth, fraction)
    if kind == COMBINED:
        return combined_score(pred, truth, fraction)
    raise ValueError(f"unknown metric kind: {kind!r}")
