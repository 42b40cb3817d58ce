"""Run configuration, gated inference, ablation, cost reports and tables."""
from metseg.pipeline.ablation import AblationResult, AblationSpec, enumerate_subsets, run_ablation
from metseg.pipeline.config import CONFIG_VERSION, PipelineConfig
from metseg.pipeline.cost import CostReport, baseline_windows, cost_report, volume_cost_report
from metseg.pipeline.inference import (
    GatedResult,
    GateSettings,
    run_gated_inference,
    segment_volume,
    sliding_window_regions,
)
from metseg.pipeline.manifest import RunManifest
from metseg.pipeline.runner import evaluate_two_stage, load_cases, train_two_stage
from metseg.pipeline.tables import best_row, render_tables

__all__ = [
    "AblationResult",
    "AblationSpec",
    "CONFIG_VERSION",
    "CostReport",
    "GateSettings",
    "GatedResult",
    "PipelineConfig",
    "RunManifest",
    "baseline_windows",
    "best_row",
    "cost_report",
    "enumerate_subsets",
    "evaluate_two_stage",
    "load_cases",
    "render_tables",
    "run_ablation",
    "run_gated_inference",
    "segment_volume",
    "sliding_window_regions",
    "train_two_stage",
]
