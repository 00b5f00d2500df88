"""Leakage-safe expanding/sliding-window backtest engine.

For each target period T the engine assembles training data from train-flagged
rows of periods strictly before T (windowed), runs the configured selection
stages, fits the model grid, picks a winner on validation feedback, and scores
its predictions on period-T test rows. Validation feedback for period T is the
train-flagged portion of period T when labelled, else the most recent labelled
period. The fit stage only ever sees sliced history views, so future
information cannot reach the weights structurally.
"""

from __future__ import annotations

import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import metrics, models, selection
from .errors import (
    CrossrankError,
    InsufficientHistoryError,
    InvalidConfigError,
)
from .features import FeatureMatrix, FeatureRecipe, IndicatorParams, featurize_panel, pca_fit, pca_transform
from .models import ModelSpec
from .panel import RAW, Panel, impute, slice_window
from .targets import TransformSpec, chrono_scale_rank

STAGE_NAMES = ("period_subset", "sign_stability", "single_feature_screen",
               "redundancy_prune", "stepwise", "top_k")

REUSE_LAST = "reuse_last"
GENERIC_AVERAGE = "generic_average"

ENGINE_TAG = "crossrank-0.1.0"


@dataclass(frozen=True)
class PipelineSpec:
    recipe: FeatureRecipe
    models: tuple[ModelSpec, ...]
    imputation: str = "zero"
    target_transform: TransformSpec | None = None
    stages: tuple = ()                      # entries: "name" or ("top_k", k)
    window: str = "expanding"               # or "sliding"
    window_k: int | None = None
    first_eval_ordinal: int = 13
    selection_metric: str = metrics.COMBINED
    final_period_rule: str = REUSE_LAST

    def __post_init__(self):
        if not self.models:
            raise InvalidConfigError("model grid must not be empty")
        if self.first_eval_ordinal < 2:
            raise InvalidConfigError("first_eval_ordinal must be >= 2")
        if self.window not in ("expanding", "sliding"):
            raise InvalidConfigError(f"unknown window mode: {self.window!r}")
        if self.window == "sliding" and (self.window_k is None or self.window_k < 1):
            raise InvalidConfigError("sliding window needs window_k >= 1")
        if self.selection_metric not in metrics.METRIC_KINDS:
            raise InvalidConfigError(f"unknown selection metric: {self.selection_metric!r}")
        if self.final_period_rule not in (REUSE_LAST, GENERIC_AVERAGE):
            raise InvalidConfigError(f"unknown final period rule: {self.final_period_rule!r}")
        for name, _ in self.normalized_stages():
            if name not in STAGE_NAMES:
                raise InvalidConfigError(f"unknown selection stage: {name!r}")

    def normalized_stages(self) -> list[tuple[str, object]]:
        out = []
        for entry in self.stages:
            if isinstance(entry, str):
                out.append((entry, None))
            else:
                name, param = entry
                out.append((name, param))
        return out

    def to_dict(self) -> dict:
        return {
            "recipe": self.recipe.to_dict(),
            "models": [m.to_dict() for m in self.models],
            "imputation": self.imputation,
            "target_transform": ({"power": self.target_transform.power}
                                 if self.target_transform else None),
            "stages": [[name, param] for name, param in self.normalized_stages()],
            "window": self.window,
            "window_k": self.window_k,
            "first_eval_ordinal": self.first_eval_ordinal,
            "selection_metric": self.selection_metric,
            "final_period_rule": self.final_period_rule,
        }

    @staticmethod
    def from_dict(d: dict) -> "PipelineSpec":
        allowed = {"recipe", "models", "imputation", "target_transform", "stages",
                   "window", "window_k", "first_eval_ordinal", "selection_metric",
                   "final_period_rule"}
        unknown = set(d) - allowed
        if unknown:
            raise InvalidConfigError(f"unknown pipeline keys: {sorted(unknown)}")
        if "recipe" not in d or "models" not in d:
            raise InvalidConfigError("pipeline config needs 'recipe' and 'models'")
        recipe_d = dict(d["recipe"])
        rec_allowed = {"stats", "include_percentiles", "include_calendar", "pairwise",
                       "indicators", "pca"}
        unknown = set(recipe_d) - rec_allowed
        if unknown:
            raise InvalidConfigError(f"unknown recipe keys: {sorted(unknown)}")
        if recipe_d.get("indicators") is not None:
            recipe_d["indicators"] = IndicatorParams(**recipe_d["indicators"])
        if "stats" in recipe_d:
            recipe_d["stats"] = tuple(recipe_d["stats"])
        if "pairwise" in recipe_d:
            recipe_d["pairwise"] = tuple(recipe_d["pairwise"])
        try:
            recipe = FeatureRecipe(**recipe_d)
            model_grid = tuple(ModelSpec.from_dict(m) for m in d["models"])
        except (ValueError, TypeError) as exc:
            raise InvalidConfigError(str(exc)) from None
        tf = d.get("target_transform")
        stages = tuple(entry if isinstance(entry, str) else (entry[0], entry[1])
                       for entry in d.get("stages", []))
        return PipelineSpec(
            recipe=recipe,
            models=model_grid,
            imputation=d.get("imputation", "zero"),
            target_transform=TransformSpec(power=tf["power"]) if tf else None,
            stages=stages,
            window=d.get("window", "expanding"),
            window_k=d.get("window_k"),
            first_eval_ordinal=d.get("first_eval_ordinal", 13),
            selection_metric=d.get("selection_metric", metrics.COMBINED),
            final_period_rule=d.get("final_period_rule", REUSE_LAST),
        )


@dataclass
class PeriodRecord:
    label: str
    ordinal: int
    status: str                       # "ok" | "unscored" | "failed: <reason>"
    model_label: str | None = None
    model: dict | None = None
    kept_features: list[str] | None = None
    kept_periods: list[int] | None = None
    spearman: float | None = None
    ndcg: float | None = None
    combined: float | None = None
    score_table: list[dict] | None = None
    # in-memory only, not serialized:
    obs_ids: list[str] | None = None
    predictions: np.ndarray | None = None

    def to_dict(self) -> dict:
        return {
            "period": self.label,
            "ordinal": self.ordinal,
            "status": self.status,
            "model_label": self.model_label,
            "model": self.model,
            "n_features": len(self.kept_features) if self.kept_features is not None else None,
            "n_periods_kept": len(self.kept_periods) if self.kept_periods is not None else None,
            "kept_features": self.kept_features,
            "kept_periods": self.kept_periods,
            "spearman": self.spearman,
            "ndcg": self.ndcg,
            "combined": self.combined,
            "score_table": self.score_table,
        }

    @staticmethod
    def from_dict(d: dict) -> "PeriodRecord":
        return PeriodRecord(
            label=d["period"], ordinal=d["ordinal"], status=d["status"],
            model_label=d.get("model_label"), model=d.get("model"),
            kept_features=d.get("kept_features"), kept_periods=d.get("kept_periods"),
            spearman=d.get("spearman"), ndcg=d.get("ndcg"), combined=d.get("combined"),
            score_table=d.get("score_table"),
        )


@dataclass
class BacktestReport:
    pipeline: dict
    provenance: dict
    records: list[PeriodRecord] = field(default_factory=list)
    aggregates: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "schema": "crossrank-report-v1",
            "pipeline": self.pipeline,
            "provenance": self.provenance,
            "records": [r.to_dict() for r in self.records],
            "aggregates": self.aggregates,
        }

    @staticmethod
    def from_dict(d: dict) -> "BacktestReport":
        return BacktestReport(
            pipeline=d["pipeline"],
            provenance=d["provenance"],
            records=[PeriodRecord.from_dict(r) for r in d["records"]],
            aggregates=d["aggregates"],
        )


def _aggregate(records: list[PeriodRecord]) -> dict:
    scored = [r for r in records if r.status == "ok"]
    agg = {"n_periods": len(records), "n_scored": len(scored),
           "n_failed": sum(1 for r in records if r.status.startswith("failed")),
           "n_unscored": sum(1 for r in records if r.status == "unscored")}
    for name in ("spearman", "ndcg", "combined"):
        vals = np.asarray([getattr(r, name) for r in scored], dtype=np.float64)
        if vals.size:
            agg[f"{name}_mean"] = float(vals.mean())
            agg[f"{name}_std"] = float(vals.std(ddof=1)) if vals.size > 1 else 0.0
        else:
            agg[f"{name}_mean"] = None
            agg[f"{name}_std"] = None
    return agg


def _labelled_train_mask(p) -> np.ndarray:
    return p.is_train & ~np.isnan(p.target)


class _Engine:
    def __init__(self, panel: Panel, spec: PipelineSpec):
        self.panel = panel
        self.spec = spec
        self.features = featurize_panel(panel, spec.recipe)
        self.stage_spec = spec.models[0]   # feature stages are judged with the first grid model

    def history_blocks(self, T: int):
        """(ordinal, FeatureMatrix, raw y) per history period with labelled train rows."""
        window_k = self.spec.window_k if self.spec.window == "sliding" else None
        history = slice_window(self.panel, T - 1, last=window_k)
        blocks = []
        for p in history.periods:
            mask = _labelled_train_mask(p)
            if mask.any():
                blocks.append((p.pid.ordinal,
                               self.features[p.pid.ordinal].take_rows(mask),
                               p.target[mask]))
        return blocks

    def validation_rows(self, T: int):
        """Period-T labelled train rows, else those of the most recent labelled period."""
        p = self.panel.period(T)
        mask = _labelled_train_mask(p)
        if mask.any():
            return self.features[T].take_rows(mask), p.target[mask]
        for prior in reversed([q for q in self.panel.periods if q.pid.ordinal < T]):
            mask = _labelled_train_mask(prior)
            if mask.any():
                ordinal = prior.pid.ordinal
                return self.features[ordinal].take_rows(mask), prior.target[mask]
        raise InsufficientHistoryError(f"no labelled rows at or before period {T}")

    def fit_targets(self, blocks):
        """Raw or chronologically transformed targets, split back per period block."""
        if self.spec.target_transform is None:
            return [y for _, _, y in blocks]
        ordinals = np.concatenate([np.full(y.size, t, dtype=np.float64)
                                   for t, _, y in blocks])
        y_all = np.concatenate([y for _, _, y in blocks])
        transformed = chrono_scale_rank(ordinals, y_all, self.spec.target_transform)
        out = []
        pos = 0
        for _, _, y in blocks:
            out.append(transformed[pos:pos + y.size])
            pos += y.size
        return out

    def augment_pca(self, blocks, val_fm, test_fm):
        """Fit PCA on the pooled training rows and append pc_* columns everywhere."""
        train_fm = FeatureMatrix.vstack([fm for _, fm, _ in blocks])
        model = pca_fit(train_fm, self.spec.recipe.pca)
        def extend(fm: FeatureMatrix) -> FeatureMatrix:
            return fm.hstack(pca_transform(model, fm))
        blocks = [(t, extend(fm), y) for t, fm, y in blocks]
        return blocks, extend(val_fm), extend(test_fm)

    def run_stages(self, blocks, y_blocks, val_fm, val_y):
        """Apply the configured stages; returns (blocks, feature order, stepwise flag)."""
        feat_names = list(blocks[0][1].names)
        stepwise_active = any(name == "stepwise" for name, _ in self.spec.normalized_stages())
        if stepwise_active:
            n60 = max(1, int(0.6 * val_y.size))
            val60 = (val_fm.take_rows(np.arange(n60)), val_y[:n60])
            rest = np.arange(n60, val_y.size)
            grid_val = ((val_fm.take_rows(rest), val_y[rest]) if rest.size >= 2
                        else (val_fm, val_y))
        else:
            val60 = (val_fm, val_y)
            grid_val = (val_fm, val_y)

        def concat(selected):
            X = FeatureMatrix.vstack([fm.select(selected) for _, fm, _ in blocks])
            y = np.concatenate(y_blocks)
            return X, y

        for name, param in self.spec.normalized_stages():
            if name == "period_subset":
                pb = [(t, fm.select(feat_names), y)
                      for (t, fm, _), y in zip(blocks, y_blocks)]
                outcome = selection.select_training_periods(
                    pb, self.stage_spec, grid_val[0].select(feat_names), grid_val[1],
                    metric=self.spec.selection_metric)
                keep = set(outcome.kept)
                pairs = [(b, y) for b, y in zip(blocks, y_blocks) if b[0] in keep]
                blocks = [b for b, _ in pairs]
                y_blocks = [y for _, y in pairs]
            elif name == "sign_stability":
                pb = [(t, fm.select(feat_names), y) for t, fm, y in blocks]
                outcome = selection.sign_stability_filter(
                    pb, grid_val[0].select(feat_names), grid_val[1], feat_names,
                    max_flips=10 if param is None else int(param))
                feat_names = outcome.kept
            elif name == "single_feature_screen":
                X, y = concat(feat_names)
                outcome = selection.single_feature_screen(
                    feat_names, X, y, grid_val[0].select(feat_names), grid_val[1],
                    self.stage_spec, metric=self.spec.selection_metric)
                feat_names = outcome.kept
            elif name == "redundancy_prune":
                means = np.vstack([fm.select(feat_names).values.mean(axis=0)
                                   for _, fm, _ in blocks])
                outcome = selection.redundancy_prune(
                    feat_names, means, threshold=0.8 if param is None else float(param))
                feat_names = outcome.kept
            elif name == "stepwise":
                X, y = concat(feat_names)
                ordered = selection.order_features_by_correlation(X, y, feat_names)
                outcome = selection.stepwise_forward_select(
                    ordered, X, y, val60[0].select(ordered), val60[1],
                    self.stage_spec, metric=self.spec.selection_metric)
                feat_names = outcome.kept
            else:  # top_k
                k = int(param) if param is not None else len(feat_names)
                feat_names = feat_names[:max(1, min(k, len(feat_names)))]
        return blocks, y_blocks, feat_names, grid_val

    def candidates_for(self, blocks, y_blocks, feat_names, grid_val):
        """(label, predict_fn) per grid model, memoizing the fitted models."""
        X_fit = FeatureMatrix.vstack([fm.select(feat_names) for _, fm, _ in blocks])
        y_fit = np.concatenate(y_blocks)
        Xv = grid_val[0].select(feat_names).values
        fitted: dict[str, models.TrainedLinearModel] = {}

        def make(label, mspec):
            def predict_fn():
                model = models.fit(X_fit, y_fit, mspec)
                fitted[label] = model
                return Xv @ model.weights + model.intercept
            return predict_fn

        labels = []
        cands = []
        for i, mspec in enumerate(self.spec.models):
            label = f"{i}:{mspec.label()}"
            labels.append(label)
            cands.append((label, make(label, mspec)))
        return cands, fitted

    def evaluate_period(self, T: int) -> PeriodRecord:
        p = self.panel.period(T)
        record = PeriodRecord(label=p.pid.label, ordinal=T, status="ok")
        blocks = self.history_blocks(T)
        if not blocks:
            record.status = "failed: no labelled training history"
            return record
        val_fm, val_y = self.validation_rows(T)
        test_mask = ~p.is_train
        test_fm = self.features[T].take_rows(test_mask)

        if self.spec.recipe.pca is not None:
            blocks, val_fm, test_fm = self.augment_pca(blocks, val_fm, test_fm)
        y_blocks = self.fit_targets(blocks)
        blocks, y_blocks, feat_names, grid_val = self.run_stages(
            blocks, y_blocks, val_fm, val_y)

        cands, fitted = self.candidates_for(blocks, y_blocks, feat_names, grid_val)
        best_label, table = selection.grid_search_best(
            cands, grid_val[1], metric=self.spec.selection_metric)
        model = fitted[best_label]

        record.model_label = best_label
        record.model = model.spec.to_dict()
        record.kept_features = feat_names
        record.kept_periods = [t for t, _, _ in blocks]
        record.score_table = table
        record.obs_ids = [oid for _, oid in test_fm.row_ids]
        record.predictions = test_fm.select(feat_names).values @ model.weights + model.intercept

        truth = p.target[test_mask]
        have = ~np.isnan(truth)
        if have.sum() >= 2:
            pred = record.predictions[have]
            record.spearman = metrics.spearman(pred, truth[have])
            record.ndcg = metrics.ndcg_top_fraction(pred, truth[have])
            record.combined = 0.5 * (record.spearman + record.ndcg)
        else:
            record.status = "unscored"
        return record

    def evaluate_final_unlabeled(self, T: int, prior: list[PeriodRecord]) -> PeriodRecord:
        """Final period with no labelled rows: reuse or average prior configurations."""
        p = self.panel.period(T)
        record = PeriodRecord(label=p.pid.label, ordinal=T, status="unscored")
        usable = [r for r in prior if r.status in ("ok", "unscored") and r.model is not None]
        if not usable:
            record.status = "failed: no prior period succeeded"
            return record

        blocks = self.history_blocks(T)
        if not blocks:
            record.status = "failed: no labelled training history"
            return record

        if self.spec.final_period_rule == REUSE_LAST:
            src = usable[-1]
            mspec = ModelSpec.from_dict(src.model)
            feat_names = list(src.kept_features)
        else:
            # best mean validation score across all prior periods, ties by grid order
            sums: dict[str, list[float]] = {}
            order: list[str] = []
            for r in usable:
                for entry in r.score_table or []:
                    if entry["score"] is None:
                        continue
                    if entry["label"] not in sums:
                        sums[entry["label"]] = []
                        order.append(entry["label"])
                    sums[entry["label"]].append(entry["score"])
            if not sums:
                record.status = "failed: no prior candidate scores"
                return record
            grid_order = [f"{i}:{m.label()}" for i, m in enumerate(self.spec.models)]
            ranked = sorted(sums, key=lambda lab: (-float(np.mean(sums[lab])),
                                                   grid_order.index(lab)))
            best = ranked[0]
            mspec = self.spec.models[grid_order.index(best)]
            src = usable[-1]
            feat_names = list(src.kept_features)
            record.score_table = [{"label": lab, "score": float(np.mean(sums[lab])),
                                   "error": None} for lab in grid_order if lab in sums]

        if self.spec.recipe.pca is not None:
            test_fm = self.features[T].take_rows(~p.is_train)
            blocks, _, test_fm = self.augment_pca(blocks, test_fm, test_fm)
        else:
            test_fm = self.features[T].take_rows(~p.is_train)
        y_blocks = self.fit_targets(blocks)
        X_fit = FeatureMatrix.vstack([fm.select(feat_names) for _, fm, _ in blocks])
        model = models.fit(X_fit, np.concatenate(y_blocks), mspec)

        record.model_label = mspec.label()
        record.model = mspec.to_dict()
        record.kept_features = feat_names
        record.kept_periods = [t for t, _, _ in blocks]
        record.obs_ids = [oid for _, oid in test_fm.row_ids]
        record.predictions = test_fm.select(feat_names).values @ model.weights + model.intercept
        return record


def run_backtest(panel: Panel, spec: PipelineSpec, jobs: int = 1) -> BacktestReport:
    """Evaluate every period from first_eval_ordinal onward; failures are recorded
    per period without aborting the rest."""
    if panel.provenance.imputation == RAW:
        work_panel = impute(panel, spec.imputation)
    elif panel.provenance.imputation == spec.imputation:
        work_panel = panel
    else:
        raise InvalidConfigError(
            f"panel imputed with {panel.provenance.imputation!r} but pipeline "
            f"requests {spec.imputation!r}")
    P = work_panel.last_ordinal
    if spec.first_eval_ordinal > P:
        raise InsufficientHistoryError(
            f"first_eval_ordinal {spec.first_eval_ordinal} exceeds panel length {P}")

    engine = _Engine(work_panel, spec)
    ordinals = list(range(spec.first_eval_ordinal, P + 1))

    final = work_panel.period(P)
    final_unlabeled = not _labelled_train_mask(final).any() and P in ordinals
    main = [t for t in ordinals if not (final_unlabeled and t == P)]

    def worker(T: int) -> PeriodRecord:
        try:
            return engine.evaluate_period(T)
        except CrossrankError as exc:
            return PeriodRecord(label=work_panel.period(T).pid.label, ordinal=T,
                                status=f"failed: {exc}")

    if jobs > 1 and len(main) > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            records = list(pool.map(worker, main))
    else:
        records = [worker(T) for T in main]

    if final_unlabeled:
        try:
            records.append(engine.evaluate_final_unlabeled(P, records))
        except CrossrankError as exc:
            records.append(PeriodRecord(label=final.pid.label, ordinal=P,
                                        status=f"failed: {exc}"))

    return BacktestReport(
        pipeline=spec.to_dict(),
        provenance={"engine": ENGINE_TAG, "data_checksum": panel.checksum()},
        records=records,
        aggregates=_aggregate(records),
    )


CSV_COLUMNS = "period,model,spearman,ndcg,combined,n_features,n_periods_kept,status"


def _csv_cell(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return str(v)


def emit_report(report: BacktestReport, fmt: str, path) -> None:
    """Write the report as nested JSON or a one-row-per-period CSV; byte-deterministic."""
    if fmt == "json":
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(report.to_dict(), fh, indent=2)
            fh.write("\n")
    elif fmt == "csv":
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(CSV_COLUMNS + "\n")
            for r in report.records:
                n_feat = len(r.kept_features) if r.kept_features is not None else None
                n_per = len(r.kept_periods) if r.kept_periods is not None else None
                cells = [r.label, r.model_label or "", _csv_cell(r.spearman),
                         _csv_cell(r.ndcg), _csv_cell(r.combined), _csv_cell(n_feat),
                         _csv_cell(n_per), r.status]
                fh.write(",".join(cells) + "\n")
    else:
        raise ValueError(f"unknown report format: {fmt!r}")
