"""Uncertainty decomposition, conformal calibration, and gated model selection
over cached detection features."""

from .aleatoric import DensityModel, fit_density, mahalanobis, score_aleatoric
from .bundle import ModelBundle, load_model_bundle, save_model_bundle
from .conformal import (
    CalibrationModel,
    PredictionInterval,
    conformal_quantile,
    evaluate_coverage,
    fit_calibration,
    nonconformity,
    predict_interval,
)
from .controller import ControllerConfig, Decision, calibrate_thresholds, decide
from .epistemic import (
    EpistemicConfig,
    EpistemicModel,
    cross_layer_divergence,
    fit_epistemic,
    geometric_collapse,
    knn,
    optimize_weights,
    score_epistemic,
    support_deficiency,
    support_deficiency_raw,
)
from .errors import DataError, NumericError, UqError, UsageError
from .metrics import MetricsReport, binned_mean, compute_savings, gate_ablation, pearson
from .policy import (
    ActionSet,
    RewardConfig,
    TrainConfig,
    build_state,
    double_dqn_target,
    reward,
    run_policy,
    train_policy,
)
from .records import FeatureRecord, FeatureStore, SplitSpec, load_records, split
from .synth import SynthConfig, generate_synth

__version__ = "0.1.0"
