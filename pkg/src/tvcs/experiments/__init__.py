"""Synthetic data, metrics and the experiment runner."""

from .generators import (
    crowd_structure,
    gen_classification_data,
    gen_crowd_model,
    gen_grn_series,
    gen_random_structure,
    gen_regression_data,
    gen_true_model,
    grn_structure,
    random_feasible_assignment,
)
from .harness import ExperimentConfig, ExperimentResult, aggregate, run_experiment, simulated_accuracy
from .metrics import (
    ConfusionCounts,
    MetricReport,
    auc_score,
    classification_error,
    confusion_and_metrics,
    metrics_from_counts,
    recovery_success,
    selection_recall,
)
