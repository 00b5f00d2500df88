"""Feature recipes: monthly aggregation stats, within-period percentiles, calendar
fields, synthetic pairwise combinations, trailing technical indicators, and PCA.

Every output of featurize_panel is leakage-safe by construction: a row's
features in period t depend only on period-t raw values plus target statistics
from periods strictly before t (the technical-indicator series).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import (
    ColumnMismatchError,
    DegenerateInputError,
    EmptySeriesError,
)
from .metrics import average_ranks
from .panel import Panel, PeriodData, StockObservation, parse_label

STAT_NAMES = (
    "mean", "median", "std", "max", "min",
    "change", "change_second_last_to_last", "range",
    "mean_diff", "median_diff", "std_diff", "max_diff", "min_diff",
    "cv",
)

PAIRWISE_OPS = ("product", "difference", "ratio")

RATIO_EPS = 1e-8


@dataclass(frozen=True)
class IndicatorParams:
    ma_window: int = 3
    ema_alpha: float = 0.5
    momentum_lag: int = 1
    roc_lag: int = 1

    def __post_init__(self):
        if self.ma_window < 1 or self.momentum_lag < 1 or self.roc_lag < 1:
            raise ValueError("indicator windows and lags must be >= 1")
        if not 0.0 < self.ema_alpha <= 1.0:
            raise ValueError("ema_alpha must be in (0, 1]")

    def to_dict(self) -> dict:
        return {"ma_window": self.ma_window, "ema_alpha": self.ema_alpha,
                "momentum_lag": self.momentum_lag, "roc_lag": self.roc_lag}


@dataclass(frozen=True)
class FeatureRecipe:
    stats: tuple[str, ...] = ("mean",)
    include_percentiles: bool = False
    include_calendar: bool = False
    pairwise: tuple[str, ...] = ()
    indicators: IndicatorParams | None = None
    pca: float | None = None  # variance-fraction threshold in (0, 1]

    def __post_init__(self):
        bad = [s for s in self.stats if s not in STAT_NAMES]
        if bad:
            raise ValueError(f"unknown stats: {bad}")
        bad = [op for op in self.pairwise if op not in PAIRWISE_OPS]
        if bad:
            raise ValueError(f"unknown pairwise ops: {bad}")
        if self.pca is not None and not 0.0 < self.pca <= 1.0:
            raise ValueError("pca threshold must be in (0, 1]")
        if not (self.stats or self.include_percentiles or self.include_calendar
                or self.pairwise or self.indicators):
            raise ValueError("recipe enables no feature source")

    def to_dict(self) -> dict:
        return {
            "stats": list(self.stats),
            "include_percentiles": self.include_percentiles,
            "include_calendar": self.include_calendar,
            "pairwise": list(self.pairwise),
            "indicators": self.indicators.to_dict() if self.indicators else None,
            "pca": self.pca,
        }


class FeatureMatrix:
    """Named-column numeric matrix aligned to (period ordinal, obs_id) row identities."""

    __slots__ = ("names", "values", "row_ids", "_index")

    def __init__(self, names: list[str], values: np.ndarray,
                 row_ids: list[tuple[int, str]]):
        values = np.asarray(values, dtype=np.float64)
        if values.ndim != 2 or values.shape != (len(row_ids), len(names)):
            raise ValueError(
                f"values shape {values.shape} does not match {len(row_ids)} rows x "
                f"{len(names)} columns")
        if len(set(names)) != len(names):
            raise ValueError("column names must be unique")
        self.names = list(names)
        self.values = values
        self.row_ids = list(row_ids)
        self._index = {n: j for j, n in enumerate(self.names)}

    @property
    def n_rows(self) -> int:
        return self.values.shape[0]

    @property
    def n_cols(self) -> int:
        return self.values.shape[1]

    def column(self, name: str) -> np.ndarray:
        return self.values[:, self._index[name]]

    def select(self, names: list[str]) -> "FeatureMatrix":
        try:
            idx = [self._index[n] for n in names]
        except KeyError as exc:
            raise ColumnMismatchError(f"unknown column {exc.args[0]!r}") from None
        return FeatureMatrix(list(names), self.values[:, idx], self.row_ids)

    def take_rows(self, mask_or_idx) -> "FeatureMatrix":
        idx = np.asarray(mask_or_idx)
        if idx.dtype == bool:
            idx = np.flatnonzero(idx)
        rows = [self.row_ids[i] for i in idx]
        return FeatureMatrix(self.names, self.values[idx], rows)

    def hstack(self, other: "FeatureMatrix") -> "FeatureMatrix":
        if other.row_ids != self.row_ids:
            raise ColumnMismatchError("row identities differ; cannot hstack")
        return FeatureMatrix(self.names + other.names,
                             np.hstack([self.values, other.values]), self.row_ids)

    @staticmethod
    def vstack(parts: list["FeatureMatrix"]) -> "FeatureMatrix":
        if not parts:
            raise ValueError("nothing to stack")
        names = parts[0].names
        for p in parts[1:]:
            if p.names != names:
                raise ColumnMismatchError("column names differ; cannot vstack")
        rows = [rid for p in parts for rid in p.row_ids]
        return FeatureMatrix(names, np.vstack([p.values for p in parts]), rows)

    def to_csv(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("period_ordinal,obs_id," + ",".join(self.names) + "\n")
            for (ordinal, oid), row in zip(self.row_ids, self.values):
                fh.write(f"{ordinal},{oid}," + ",".join(repr(float(v)) for v in row) + "\n")


# ── aggregation stats ────────────────────────────────────────────────────────

def _aggregate_block(monthly: np.ndarray, stats: tuple[str, ...]):
    """monthly is (n, V, 6) with no missing values; returns (names, (n, V*len(stats)))."""
    n, V, _ = monthly.shape
    blocks = {}
    mean = monthly.mean(axis=2)
    mx = monthly.max(axis=2)
    mn = monthly.min(axis=2)
    std = monthly.std(axis=2, ddof=1)
    blocks["mean"] = mean
    blocks["median"] = np.median(monthly, axis=2)
    blocks["std"] = std
    blocks["max"] = mx
    blocks["min"] = mn
    blocks["change"] = monthly[:, :, -1] - monthly[:, :, 0]
    blocks["change_second_last_to_last"] = monthly[:, :, -1] - monthly[:, :, -2]
    blocks["range"] = mx - mn
    diffs = np.diff(monthly, axis=2)
    blocks["mean_diff"] = diffs.mean(axis=2)
    blocks["median_diff"] = np.median(diffs, axis=2)
    blocks["std_diff"] = diffs.std(axis=2, ddof=1)
    blocks["max_diff"] = diffs.max(axis=2)
    blocks["min_diff"] = diffs.min(axis=2)
    blocks["cv"] = std / (np.abs(mean) + RATIO_EPS)

    names = [f"X{i}_{stat}" for stat in stats for i in range(1, V + 1)]
    values = np.hstack([blocks[stat] for stat in stats]) if stats else np.zeros((n, 0))
    return names, values


def aggregate_monthly_stats(obs: StockObservation, stats=STAT_NAMES) -> dict[str, float]:
    """Per-observation aggregation stats keyed by column name (X{i}_{stat})."""
    stats = tuple(stats)
    names, values = _aggregate_block(obs.monthly[None, :, :], stats)
    return dict(zip(names, values[0]))


def percentile_within_period(values) -> np.ndarray:
    """Percentile in [0, 1] by average rank within the period; a lone row gets 0.5."""
    a = np.asarray(values, dtype=np.float64).ravel()
    if a.size == 0:
        raise ValueError("empty period cross-section")
    if a.size == 1:
        return np.array([0.5])
    return (average_ranks(a) - 1.0) / (a.size - 1.0)


def calendar_features(label: str) -> tuple[float, float]:
    """("YYYY_H") -> (year, half) as floats."""
    year, half = parse_label(label)
    return float(year), float(half)


def synthetic_pairwise(fm: FeatureMatrix, ops=PAIRWISE_OPS) -> FeatureMatrix:
    """Appended columns for every unordered column pair (a before b in column order).

    ratio divides by b + eps*sign(b) with sign(0) = 1, so a zero denominator
    yields a large finite value instead of a fault.
    """
    ops = tuple(ops)
    bad = [op for op in ops if op not in PAIRWISE_OPS]
    if bad:
        raise ValueError(f"unknown pairwise ops: {bad}")
    cols = fm.values
    names = []
    out = []
    for op in ops:
        for ai in range(fm.n_cols - 1):
            a = cols[:, ai]
            for bi in range(ai + 1, fm.n_cols):
                b = cols[:, bi]
                if op == "product":
                    vals = a * b
                elif op == "difference":
                    vals = a - b
                else:
                    sign = np.where(b < 0, -1.0, 1.0)
                    vals = a / (b + RATIO_EPS * sign)
                names.append(f"syn_{op}_{fm.names[ai]}_{fm.names[bi]}")
                out.append(vals)
    block = np.column_stack(out) if out else np.zeros((fm.n_rows, 0))
    return fm.hstack(FeatureMatrix(names, block, fm.row_ids))


# ── technical indicators over the past target-mean series ────────────────────

def technical_indicators(series, params: IndicatorParams) -> dict[str, float]:
    """Trailing indicators of a per-period series (periods strictly before the target).

    MA averages the last ma_window values (fewer if unavailable). EMA starts at
    the first value. Momentum and ROC fall back to 0 when there is not enough
    history, and ROC also when the reference value is 0.
    """
    s = np.asarray(series, dtype=np.float64).ravel()
    if s.size == 0:
        raise EmptySeriesError("indicator series is empty")
    T = s.size
    ma = float(s[-min(params.ma_window, T):].mean())
    ema = float(s[0])
    for v in s[1:]:
        ema = params.ema_alpha * float(v) + (1.0 - params.ema_alpha) * ema
    if T > params.momentum_lag:
        momentum = float(s[-1] - s[-1 - params.momentum_lag])
    else:
        momentum = 0.0
    if T > params.roc_lag and s[-1 - params.roc_lag] != 0.0:
        roc = float(s[-1] / s[-1 - params.roc_lag] - 1.0)
    else:
        roc = 0.0
    return {"ind_ma": ma, "ind_ema": ema, "ind_momentum": momentum, "ind_roc": roc}


def period_target_means(panel: Panel) -> tuple[np.ndarray, np.ndarray]:
    """Mean training-row target per period, skipping periods with no labelled train rows."""
    ordinals, means = [], []
    for p in panel.periods:
        y = p.target[p.is_train]
        y = y[~np.isnan(y)]
        if y.size:
            ordinals.append(p.pid.ordinal)
            means.append(float(y.mean()))
    return np.asarray(ordinals, dtype=np.int64), np.asarray(means, dtype=np.float64)


# ── PCA via cyclic Jacobi rotations (deterministic, seed-free) ───────────────

def _jacobi_eigh(S: np.ndarray, tol: float = 1e-13, max_sweeps: int = 60):
    """Eigen-decomposition of a symmetric matrix by cyclic Jacobi rotations.

    Returns (eigenvalues, eigenvectors-as-columns), descending by eigenvalue.
    """
    A = np.array(S, dtype=np.float64, copy=True)
    n = A.shape[0]
    V = np.eye(n)
    if n == 1:
        return A[0, :1].copy(), V
    norm = np.linalg.norm(A)
    if norm == 0.0:
        return np.zeros(n), V
    for _ in range(max_sweeps):
        off = math.sqrt(max(0.0, float(np.sum(A * A)) - float(np.sum(np.diag(A) ** 2))))
        if off <= tol * norm:
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = A[p, q]
                if abs(apq) <= 1e-300:
                    continue
                theta = (A[q, q] - A[p, p]) / (2.0 * apq)
                t = (1.0 if theta >= 0 else -1.0) / (abs(theta) + math.sqrt(theta * theta + 1.0))
                c = 1.0 / math.sqrt(t * t + 1.0)
                s = t * c
                col_p, col_q = A[:, p].copy(), A[:, q].copy()
                A[:, p] = c * col_p - s * col_q
                A[:, q] = s * col_p + c * col_q
                row_p, row_q = A[p, :].copy(), A[q, :].copy()
                A[p, :] = c * row_p - s * row_q
                A[q, :] = s * row_p + c * row_q
                A[p, q] = A[q, p] = 0.0
                vp, vq = V[:, p].copy(), V[:, q].copy()
                V[:, p] = c * vp - s * vq
                V[:, q] = s * vp + c * vq
    vals = np.diag(A).copy()
    order = np.argsort(-vals, kind="stable")
    return vals[order], V[:, order]


def _fix_signs(vectors: np.ndarray) -> np.ndarray:
    """Make the first non-negligible entry of each column positive."""
    out = vectors.copy()
    for j in range(out.shape[1]):
        col = out[:, j]
        idx = np.flatnonzero(np.abs(col) > 1e-12 * max(1.0, np.abs(col).max()))
        if idx.size and col[idx[0]] < 0:
            out[:, j] = -col
    return out


@dataclass
class PcaModel:
    column_names: list[str] | None
    means: np.ndarray
    loadings: np.ndarray       # (d, d), columns are eigenvectors, eigenvalues descending
    eigenvalues: np.ndarray
    explained: np.ndarray      # variance fractions
    k: int
    threshold: float


def pca_fit(X, variance_threshold: float) -> PcaModel:
    """Centered (not rescaled) PCA; keeps the smallest k explaining >= the threshold."""
    if not 0.0 < variance_threshold <= 1.0:
        raise ValueError("variance threshold must be in (0, 1]")
    names = getattr(X, "names", None)
    values = np.asarray(getattr(X, "values", X), dtype=np.float64)
    if values.ndim != 2 or values.shape[0] < 2:
        raise DegenerateInputError("PCA needs at least 2 rows")
    means = values.mean(axis=0)
    centered = values - means
    cov = centered.T @ centered / (values.shape[0] - 1)
    total = float(np.trace(cov))
    if total <= 0.0:
        raise DegenerateInputError("total variance is zero")
    vals, vecs = _jacobi_eigh(cov)
    vals = np.maximum(vals, 0.0)
    vecs = _fix_signs(vecs)
    explained = vals / vals.sum()
    cum = np.cumsum(explained)
    hits = np.flatnonzero(cum >= variance_threshold - 1e-12)
    k = int(hits[0]) + 1 if hits.size else vals.size
    return PcaModel(column_names=list(names) if names is not None else None,
                    means=means, loadings=vecs, eigenvalues=vals,
                    explained=explained, k=k, threshold=variance_threshold)


def pca_transform(model: PcaModel, X) -> FeatureMatrix:
    """Project rows onto the kept components; columns pc_1..pc_k."""
    names = getattr(X, "names", None)
    values = np.asarray(getattr(X, "values", X), dtype=np.float64)
    row_ids = getattr(X, "row_ids", None)
    if model.column_names is not None and names is not None and list(names) != model.column_names:
        raise ColumnMismatchError("PCA transform columns do not match the fitted columns")
    if values.ndim != 2 or values.shape[1] != model.means.size:
        raise ColumnMismatchError(
            f"PCA was fit on {model.means.size} columns, got {values.shape}")
    scores = (values - model.means) @ model.loadings[:, :model.k]
    if row_ids is None:
        row_ids = [(0, str(i)) for i in range(values.shape[0])]
    return FeatureMatrix([f"pc_{j}" for j in range(1, model.k + 1)], scores, row_ids)


# ── full-panel featurization ─────────────────────────────────────────────────

def _featurize_period(p: PeriodData, recipe: FeatureRecipe,
                      indicator_values: dict[str, float] | None) -> FeatureMatrix:
    row_ids = [(p.pid.ordinal, oid) for oid in p.obs_ids]
    names: list[str] = []
    blocks: list[np.ndarray] = []

    stat_names, stat_values = _aggregate_block(p.monthly, tuple(recipe.stats))
    if recipe.stats:
        names.extend(stat_names)
        blocks.append(stat_values)

    needs_means = recipe.include_percentiles or recipe.pairwise
    if needs_means:
        mean_names, mean_values = _aggregate_block(p.monthly, ("mean",))

    if recipe.include_percentiles:
        pct = np.column_stack([percentile_within_period(mean_values[:, j])
                               for j in range(mean_values.shape[1])])
        names.extend(f"X{i}_mean_pctile" for i in range(1, p.n_vars + 1))
        blocks.append(pct)

    if recipe.include_calendar:
        year, half = calendar_features(p.pid.label)
        names.extend(["cal_year", "cal_half"])
        blocks.append(np.column_stack([np.full(p.n_obs, year), np.full(p.n_obs, half)]))

    if recipe.pairwise:
        base = FeatureMatrix(mean_names, mean_values, row_ids)
        paired = synthetic_pairwise(base, recipe.pairwise)
        names.extend(paired.names[len(mean_names):])
        blocks.append(paired.values[:, len(mean_names):])

    if recipe.indicators is not None:
        vals = indicator_values or {"ind_ma": 0.0, "ind_ema": 0.0,
                                    "ind_momentum": 0.0, "ind_roc": 0.0}
        names.extend(vals.keys())
        blocks.append(np.tile(np.fromiter(vals.values(), dtype=np.float64), (p.n_obs, 1)))

    values = np.hstack(blocks) if blocks else np.zeros((p.n_obs, 0))
    return FeatureMatrix(names, values, row_ids)


def featurize_panel(panel: Panel, recipe: FeatureRecipe) -> dict[int, FeatureMatrix]:
    """One FeatureMatrix per period ordinal, identical columns across periods.

    Technical indicators for period t are computed from the mean training-row
    target of periods strictly before t, and are 0 when no such history exists.
    PCA is not applied here; it must be fit per evaluation window (see backtest).
    """
    indicator_cache: dict[int, dict[str, float] | None] = {}
    if recipe.indicators is not None:
        ords, means = period_target_means(panel)
        for p in panel.periods:
            t = p.pid.ordinal
            past = means[ords < t]
            indicator_cache[t] = (technical_indicators(past, recipe.indicators)
                                  if past.size else None)
    return {p.pid.ordinal: _featurize_period(p, recipe, indicator_cache.get(p.pid.ordinal))
            for p in panel.periods}
