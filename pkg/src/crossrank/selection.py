"""Selection procedures: training-period subsets, correlation-ordered stepwise
features, sign-stability filtering, redundancy pruning, single-feature
screening, and grid search over model candidates.

All procedures are deterministic: ties are broken by input order, and
"improves" always means "by more than tie_epsilon".
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import metrics, models
from .errors import (
    AllCandidatesFailedError,
    CrossrankError,
    DegenerateValidationError,
    NoUsableWindowError,
)

TIE_EPSILON = 1e-9
MAX_SWEEPS = 10


@dataclass
class SignStabilityStat:
    name: str
    window_signs: list[tuple[str, int]]   # (window key, sign in {-1, 0, 1})
    validation_sign: int
    flip_count: int


@dataclass
class SelectionOutcome:
    kept: list
    dropped: list[tuple[object, str]] = field(default_factory=list)
    score_trace: list[tuple[object, float]] = field(default_factory=list)
    stats: list[SignStabilityStat] | None = None

    def to_dict(self) -> dict:
        return {
            "kept": list(self.kept),
            "dropped": [[item, reason] for item, reason in self.dropped],
            "score_trace": [[step, score] for step, score in self.score_trace],
        }


def _values(X) -> np.ndarray:
    return np.asarray(getattr(X, "values", X), dtype=np.float64)


def _check_validation(y_val) -> np.ndarray:
    y = np.asarray(y_val, dtype=np.float64).ravel()
    if y.size < 2 or np.all(y == y[0]):
        raise DegenerateValidationError("validation targets are constant or too few")
    return y


def _fit_score(X_fit, y_fit, X_val, y_val, spec, metric) -> float:
    """Validation score of one fit; -inf when the fit or the metric degenerates."""
    try:
        model = models.fit(X_fit, y_fit, spec)
        pred = _values(X_val) @ model.weights + model.intercept
        return metrics.score(pred, y_val, metric)
    except CrossrankError:
        return -np.inf


def select_training_periods(period_blocks, spec, X_val, y_val,
                            metric: str = metrics.SPEARMAN,
                            tie_epsilon: float = TIE_EPSILON,
                            max_sweeps: int = MAX_SWEEPS) -> SelectionOutcome:
    """Greedy per-period removal: drop a period iff dropping strictly improves validation.

    period_blocks is an ordered list of (ordinal, X, y). Starting from all
    periods, each sweep walks them in ordinal order and keeps a removal only
    when the validation score improves by more than tie_epsilon; sweeps repeat
    until one makes no change (or max_sweeps). The kept set is never empty.
    """
    if not period_blocks:
        raise ValueError("no training periods given")
    y_val = _check_validation(y_val)
    Xv = _values(X_val)
    blocks = {ordinal: (_values(X), np.asarray(y, dtype=np.float64).ravel())
              for ordinal, X, y in period_blocks}
    ordinals = [ordinal for ordinal, _, _ in period_blocks]

    def score_subset(subset: list[int]) -> float:
        X = np.vstack([blocks[t][0] for t in subset])
        y = np.concatenate([blocks[t][1] for t in subset])
        return _fit_score(X, y, Xv, y_val, spec, metric)

    kept = list(ordinals)
    best = score_subset(kept)
    trace: list[tuple[object, float]] = [("all", best)]
    dropped: list[tuple[object, str]] = []
    for _ in range(max_sweeps):
        changed = False
        for t in list(kept):
            if len(kept) == 1:
                break
            candidate = [o for o in kept if o != t]
            s = score_subset(candidate)
            if s > best + tie_epsilon:
                kept = candidate
                best = s
                trace.append((t, s))
                dropped.append((t, "removal_improved_validation"))
                changed = True
        if not changed:
            break
    return SelectionOutcome(kept=kept, dropped=dropped, score_trace=trace)


def order_features_by_correlation(X, y, names: list[str] | None = None) -> list[str]:
    """Feature names sorted by |Pearson(feature, target)| descending.

    Zero-variance features go last with correlation defined as 0; remaining
    ties are broken by column order.
    """
    values = _values(X)
    if names is None:
        names = list(getattr(X, "names"))
    y = np.asarray(y, dtype=np.float64).ravel()
    dy = y - y.mean()
    ssy = float(dy @ dy)
    dX = values - values.mean(axis=0)
    ssx = np.einsum("ij,ij->j", dX, dX)
    degenerate = ssx <= 0.0
    with np.errstate(divide="ignore", invalid="ignore"):
        r = (dX.T @ dy) / np.sqrt(ssx * ssy)
    r = np.where(degenerate | (ssy <= 0.0), 0.0, r)
    order = sorted(range(len(names)), key=lambda j: (bool(degenerate[j]), -abs(r[j]), j))
    return [names[j] for j in order]


def stepwise_forward_select(ordered_names: list[str], X_fit, y_fit, X_val, y_val,
                            spec, metric: str = metrics.SPEARMAN,
                            tie_epsilon: float = TIE_EPSILON) -> SelectionOutcome:
    """Walk features in the given order, adding one iff refitting improves validation.

    At least one feature is always kept: the first of the order if nothing
    improved on its own.
    """
    if not ordered_names:
        raise ValueError("no candidate features")
    y_val = _check_validation(y_val)
    kept: list[str] = []
    dropped: list[tuple[object, str]] = []
    trace: list[tuple[object, float]] = []
    best = -np.inf
    for name in ordered_names:
        candidate = kept + [name]
        s = _fit_score(X_fit.select(candidate), y_fit, X_val.select(candidate),
                       y_val, spec, metric)
        if s > best + tie_epsilon:
            kept = candidate
            best = s
            trace.append((name, s))
        else:
            dropped.append((name, "no_improvement"))
    if not kept:
        kept = [ordered_names[0]]
        dropped = [(n, r) for n, r in dropped if n != ordered_names[0]]
        trace.append((ordered_names[0], best))
    return SelectionOutcome(kept=kept, dropped=dropped, score_trace=trace)


def _corr_signs(X: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Sign of Pearson(feature, y) per column; 0 where undefined."""
    dy = y - y.mean()
    ssy = float(dy @ dy)
    if ssy <= 0.0 or y.size < 2:
        return np.zeros(X.shape[1], dtype=np.int64)
    dX = X - X.mean(axis=0)
    ssx = np.einsum("ij,ij->j", dX, dX)
    num = dX.T @ dy
    return np.where(ssx <= 0.0, 0, np.sign(num)).astype(np.int64)


def sign_stability_filter(period_blocks, X_val, y_val, names: list[str],
                          window_lengths=tuple(range(2, 31)),
                          include_all: bool = True,
                          max_flips: int = 10) -> SelectionOutcome:
    """Drop features whose correlation sign flips against the validation sign too often.

    For each trailing window of training periods (lengths 2..30 that fit, plus
    "all"), the sign of the pooled feature-target Pearson correlation is
    compared with the sign over the validation rows; a feature with more than
    max_flips disagreements is dropped, the rest are kept sorted by flip count
    ascending (ties by input order). Window lengths longer than the available
    history are skipped, not clamped.
    """
    blocks = [( _values(X), np.asarray(y, dtype=np.float64).ravel())
              for _, X, y in period_blocks]
    blocks = [(X, y) for X, y in blocks if X.shape[0] > 0]
    if not blocks or sum(X.shape[0] for X, _ in blocks) == 0:
        raise NoUsableWindowError("no training rows for any window")
    P = len(blocks)
    windows: list[tuple[str, int]] = [(str(L), L) for L in window_lengths if L <= P]
    if include_all:
        windows.append(("all", P))
    if not windows:
        raise NoUsableWindowError("no window length fits the available history")

    val_signs = _corr_signs(_values(X_val), np.asarray(y_val, dtype=np.float64).ravel())
    sign_rows = {}
    for key, L in windows:
        X = np.vstack([b[0] for b in blocks[-L:]])
        y = np.concatenate([b[1] for b in blocks[-L:]])
        sign_rows[key] = _corr_signs(X, y)

    stats = []
    for j, name in enumerate(names):
        signs = [(key, int(sign_rows[key][j])) for key, _ in windows]
        flips = sum(1 for _, s in signs if s != val_signs[j])
        stats.append(SignStabilityStat(name=name, window_signs=signs,
                                       validation_sign=int(val_signs[j]),
                                       flip_count=flips))
    order = sorted(range(len(names)), key=lambda j: (stats[j].flip_count, j))
    kept = [names[j] for j in order if stats[j].flip_count <= max_flips]
    dropped = [(names[j], f"sign_flips={stats[j].flip_count}>{max_flips}")
               for j in order if stats[j].flip_count > max_flips]
    if not kept and names:
        # never return an empty feature set; keep the most stable one
        j = order[0]
        kept = [names[j]]
        dropped = [(n, r) for n, r in dropped if n != names[j]]
    return SelectionOutcome(kept=kept, dropped=dropped, stats=stats)


def redundancy_prune(ranked_names: list[str], period_means: np.ndarray,
                     threshold: float = 0.8) -> SelectionOutcome:
    """Drop features correlated at |r| >= threshold with a more significant kept feature.

    ranked_names is ordered most significant first; period_means has one row
    per training period and columns aligned to ranked_names. Dropped features
    never shadow later ones: each feature is compared against the kept set only.
    """
    if not ranked_names:
        raise ValueError("no ranked features")
    M = np.asarray(period_means, dtype=np.float64)
    dM = M - M.mean(axis=0)
    norms = np.sqrt(np.einsum("ij,ij->j", dM, dM))
    kept_idx: list[int] = []
    kept: list[str] = []
    dropped: list[tuple[object, str]] = []
    for j, name in enumerate(ranked_names):
        conflict = None
        for i in kept_idx:
            denom = norms[i] * norms[j]
            r = float(dM[:, i] @ dM[:, j]) / denom if denom > 0.0 else 0.0
            if abs(r) >= threshold:
                conflict = ranked_names[i]
                break
        if conflict is None:
            kept_idx.append(j)
            kept.append(name)
        else:
            dropped.append((name, f"|corr|>={threshold:g} with {conflict}"))
    return SelectionOutcome(kept=kept, dropped=dropped)


def single_feature_screen(names: list[str], X_fit, y_fit, X_val, y_val, spec,
                          metric: str = metrics.COMBINED) -> SelectionOutcome:
    """Fit a one-feature model per feature; drop scores <= 0, rank the rest descending."""
    if not names:
        raise ValueError("no features to screen")
    y_val = _check_validation(y_val)
    scores: list[float] = []
    for name in names:
        scores.append(_fit_score(X_fit.select([name]), y_fit, X_val.select([name]),
                                 y_val, spec, metric))
    order = sorted(range(len(names)), key=lambda j: (-scores[j], j))
    kept = [names[j] for j in order if scores[j] > 0.0]
    dropped = [(names[j], f"score={scores[j]:.6g}<=0") for j in order if scores[j] <= 0.0]
    if not kept:
        if not np.isfinite(scores[order[0]]):
            raise AllCandidatesFailedError("every single-feature fit failed")
        j = order[0]
        kept = [names[j]]
        dropped = [(n, r) for n, r in dropped if n != names[j]]
    trace = [(names[j], scores[j]) for j in order if np.isfinite(scores[j])]
    return SelectionOutcome(kept=kept, dropped=dropped, score_trace=trace)


def grid_search_best(candidates, y_val, metric: str = metrics.COMBINED):
    """Score every (label, predict_fn) candidate on the same validation targets.

    predict_fn takes no arguments and returns prediction scores for the
    validation rows. Returns (best_label, table) where table lists one dict
    per candidate in input order; ties go to the earlier candidate.
    """
    if not candidates:
        raise ValueError("no candidates")
    y = np.asarray(y_val, dtype=np.float64).ravel()
    table = []
    best_label = None
    best_score = -np.inf
    for label, predict_fn in candidates:
        try:
            pred = predict_fn()
            s = metrics.score(pred, y, metric)
            table.append({"label": label, "score": s, "error": None})
        except CrossrankError as exc:
            table.append({"label": label, "score": None, "error": str(exc)})
            continue
        if s > best_score:
            best_score = s
            best_label = label
    if best_label is None:
        raise AllCandidatesFailedError("every candidate failed to fit or score")
    return best_label, table
