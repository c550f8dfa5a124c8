from .metrics import (
    Axis,
    DisparityBin,
    Metric,
    PredictionSet,
    SubgroupMetricRecord,
    UnknownObsId,
    auroc,
    disparity_bin,
    disparity_bins,
    hidden_hypoxemia,
    metrics_at_threshold,
    slice_metrics,
    subgroups,
)
from .stats import InsufficientPairs, PairedTTest, paired_t_test, stars

__all__ = [
    "Axis",
    "DisparityBin",
    "InsufficientPairs",
    "Metric",
    "PairedTTest",
    "PredictionSet",
    "SubgroupMetricRecord",
    "UnknownObsId",
    "auroc",
    "disparity_bin",
    "disparity_bins",
    "hidden_hypoxemia",
    "metrics_at_threshold",
    "paired_t_test",
    "slice_metrics",
    "stars",
    "subgroups",
]
