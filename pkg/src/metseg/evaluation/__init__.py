"""Legacy and lesion-wise segmentation metrics."""
from metseg.evaluation.lesions import (
    LesionSet,
    MatchConfig,
    MatchResult,
    connected_components,
    filter_small,
    lesions,
    match_lesions,
)
from metseg.evaluation.metrics import boundary, hd95, legacy_dsc, lesion_wise_metric, surface_distances
from metseg.evaluation.report import (
    METRIC_NAMES,
    AggregateReport,
    MetricsReport,
    aggregate,
    aggregate_means,
    evaluate_case,
    evaluate_masks,
    format_mean_std,
    run_means,
)

__all__ = [
    "AggregateReport",
    "LesionSet",
    "METRIC_NAMES",
    "MatchConfig",
    "MatchResult",
    "MetricsReport",
    "aggregate",
    "aggregate_means",
    "boundary",
    "connected_components",
    "evaluate_case",
    "evaluate_masks",
    "filter_small",
    "format_mean_std",
    "hd95",
    "legacy_dsc",
    "lesion_wise_metric",
    "lesions",
    "match_lesions",
    "run_means",
    "surface_distances",
]
