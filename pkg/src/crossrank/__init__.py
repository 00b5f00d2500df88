"""crossrank: cross-sectional stock ranking lab.

Synthetic panels with known ground truth, feature recipes, a linear model zoo,
selection procedures, challenge-style ranking metrics, and a leakage-safe
expanding/sliding-window backtest engine.
"""

from . import errors
from .backtest import BacktestReport, PeriodRecord, PipelineSpec, emit_report, run_backtest
from .features import (
    FeatureMatrix,
    FeatureRecipe,
    IndicatorParams,
    PcaModel,
    aggregate_monthly_stats,
    calendar_features,
    featurize_panel,
    pca_fit,
    pca_transform,
    percentile_within_period,
    synthetic_pairwise,
    technical_indicators,
)
from .metrics import combined_score, ndcg_top_fraction, pearson, spearman
from .models import ModelSpec, TrainedLinearModel, fit, predict
from .panel import (
    Panel,
    PeriodData,
    PeriodId,
    StockObservation,
    impute,
    load_csv,
    slice_window,
    split,
    write_csv,
)
from .selection import (
    SelectionOutcome,
    SignStabilityStat,
    grid_search_best,
    order_features_by_correlation,
    redundancy_prune,
    select_training_periods,
    sign_stability_filter,
    single_feature_screen,
    stepwise_forward_select,
)
from .synth import GroundTruth, SplitMix64, SynthConfig, generate_panel
from .targets import TransformSpec, chrono_scale_rank, rank_normalize

__version__ = "0.1.0"
