"""Modality-subset ablation: one micro-budget two-stage run per subset and seed."""
from __future__ import annotations

import itertools
import logging
import traceback
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

from metseg.data.volumes import ALL_MODALITIES, ModalityId, parse_modalities, subset_name
from metseg.evaluation.report import AggregateReport, aggregate
from metseg.pipeline.config import PipelineConfig
from metseg.pipeline.runner import Case, evaluate_two_stage, load_cases, select_cases, train_two_stage
from metseg.pipeline.tables import best_row

log = logging.getLogger(__name__)


def enumerate_subsets(available: Sequence[ModalityId] = ALL_MODALITIES) -> list[tuple[ModalityId, ...]]:
    """All non-empty subsets, by size, then in the canonical modality order."""
    ordered = [m for m in ALL_MODALITIES if m in set(available)]
    return [c for k in range(1, len(ordered) + 1) for c in itertools.combinations(ordered, k)]


@dataclass(frozen=True)
class AblationSpec:
    base: PipelineConfig
    subsets: tuple[tuple[ModalityId, ...], ...] = ()
    det_epochs: int | None = None
    seg_iterations: int | None = None
    available: tuple[ModalityId, ...] = ALL_MODALITIES

    def __post_init__(self):
        subsets = self.subsets or tuple(parse_modalities(s) for s in self.base.ablation_subsets)
        subsets = tuple(parse_modalities(s) for s in subsets) or tuple(enumerate_subsets(self.available))
        keys = [frozenset(s) for s in subsets]
        if len(set(keys)) != len(keys):
            raise ValueError("duplicate modality subsets in ablation")
        object.__setattr__(self, "subsets", subsets)

    @property
    def budget(self) -> tuple[int, int]:
        return (
            self.det_epochs or self.base.ablation_det_epochs,
            self.seg_iterations or self.base.ablation_seg_iterations,
        )


@dataclass
class AblationResult:
    reports: dict[str, AggregateReport | None]
    failures: dict[str, str] = field(default_factory=dict)

    @property
    def best(self) -> str | None:
        """Subset with the highest average lesion-wise DSC."""
        return best_row(self.reports)

    def to_dict(self) -> dict:
        return {
            "reports": {k: (r.to_dict() if r is not None else None) for k, r in self.reports.items()},
            "failures": self.failures,
            "best": self.best,
        }


def run_ablation(
    spec: AblationSpec,
    train_cases: Sequence[Case] | None = None,
    eval_cases: Sequence[Case] | None = None,
    out_dir: str | Path | None = None,
) -> AblationResult:
    """Train and evaluate every subset for every seed of ``spec.base``.

    Cases must carry every modality used by any subset; by default they
    come from the base config (train split for fitting, test split for
    scoring). A failing subset is recorded and the harness moves on.
    """
    cfg = spec.base
    all_mods = sorted({m for s in spec.subsets for m in s}, key=ALL_MODALITIES.index)
    if train_cases is None:
        train_cases = load_cases(cfg, "train", all_mods)
    if eval_cases is None:
        eval_cases = load_cases(cfg, "test", all_mods) if cfg.data_root else train_cases
    det_epochs, seg_iterations = spec.budget
    result = AblationResult({})
    for subset in spec.subsets:
        name = subset_name(subset)
        sub_cfg = cfg.override(modalities=",".join(m.token for m in subset))
        try:
            tr, ev = select_cases(train_cases, subset), select_cases(eval_cases, subset)
            runs = []
            for seed in cfg.seeds:
                run_dir = Path(out_dir) / name / f"seed{seed}" if out_dir is not None else None
                det, seg = train_two_stage(sub_cfg, tr, seed, run_dir, det_epochs=det_epochs, seg_iterations=seg_iterations)
                reports, _ = evaluate_two_stage(sub_cfg, det, seg, ev)
                runs.append(reports)
            result.reports[name] = aggregate(runs)
            log.info("ablation %s done", name)
        except Exception as exc:  # noqa: BLE001 - isolate per-subset failures
            log.error("ablation subset %s failed: %s", name, exc)
            result.reports[name] = None
            result.failures[name] = "".join(traceback.format_exception_only(type(exc), exc)).strip()
    return result
