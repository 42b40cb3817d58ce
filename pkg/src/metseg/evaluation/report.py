"""Per-case reports and multi-seed aggregation."""
from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

from metseg.data.volumes import LABEL_NAMES, REGION_NAMES, LabelVolume, compose_regions
from metseg.evaluation.lesions import MatchConfig, lesions, match_lesions
from metseg.evaluation.metrics import hd95, legacy_dsc, lesion_wise_metric, pair_metrics
from metseg.exceptions import ShapeError

METRIC_NAMES = ("legacy_dsc", "legacy_hd95", "lesionwise_dsc", "lesionwise_hd95")


def config_fingerprint(cfg: MatchConfig) -> str:
    blob = json.dumps(asdict(cfg), sort_keys=True).encode()
    return hashlib.sha256(blob).hexdigest()[:12]


@dataclass
class MetricsReport:
    case_id: str | None
    regions: dict[str, dict[str, float]]
    fingerprint: str = ""

    def value(self, region: str, metric: str) -> float:
        return self.regions[region][metric]

    def to_dict(self) -> dict:
        return {"case_id": self.case_id, "fingerprint": self.fingerprint, "regions": self.regions}

    @classmethod
    def from_dict(cls, d: dict) -> "MetricsReport":
        return cls(d.get("case_id"), d["regions"], d.get("fingerprint", ""))


def evaluate_masks(pred: np.ndarray, gt: np.ndarray, cfg: MatchConfig, spacing=(1.0, 1.0, 1.0)) -> dict[str, float]:
    """All four metrics plus lesion bookkeeping for one binary region."""
    pred_ls, gt_ls = lesions(pred, cfg), lesions(gt, cfg)
    mr = match_lesions(pred_ls, gt_ls, cfg)
    per_pair = pair_metrics(mr, spacing, cfg.hd95_penalty)
    return {
        "legacy_dsc": legacy_dsc(pred, gt),
        "legacy_hd95": hd95(pred, gt, spacing, cfg.hd95_penalty),
        "lesionwise_dsc": lesion_wise_metric(mr, "dsc", cfg, spacing, per_pair),
        "lesionwise_hd95": lesion_wise_metric(mr, "hd95", cfg, spacing, per_pair),
        "tp": mr.tp_count,
        "fn": mr.fn_count,
        "fp": mr.fp_count,
    }


def evaluate_case(
    pred: LabelVolume,
    gt: LabelVolume,
    cfg: MatchConfig = MatchConfig(),
    include_labels: bool = True,
    spacing=None,
) -> MetricsReport:
    """Evaluate WT/TC/ET (and NETC/SNFH when ``include_labels``)."""
    if pred.shape != gt.shape:
        raise ShapeError(f"shape mismatch pred {pred.shape} vs gt {gt.shape}")
    spacing = spacing or gt.spacing
    rp, rg = compose_regions(pred), compose_regions(gt)
    regions = {name: evaluate_masks(rp[name], rg[name], cfg, spacing) for name in REGION_NAMES}
    if include_labels:
        for lab in (1, 2):
            regions[LABEL_NAMES[lab]] = evaluate_masks(pred.data == lab, gt.data == lab, cfg, spacing)
    return MetricsReport(gt.case_id or pred.case_id, regions, config_fingerprint(cfg))


def run_means(reports: Sequence[MetricsReport]) -> dict[str, dict[str, float]]:
    """Mean of every metric over the cases of one run, plus the WT/TC/ET average."""
    if not reports:
        raise ValueError("no reports to average")
    regions = list(reports[0].regions)
    out = {
        r: {m: float(np.mean([rep.value(r, m) for rep in reports])) for m in METRIC_NAMES}
        for r in regions
    }
    if all(r in out for r in REGION_NAMES):
        out["AVG"] = {m: float(np.mean([out[r][m] for r in REGION_NAMES])) for m in METRIC_NAMES}
    return out


@dataclass
class AggregateReport:
    """Across-run mean and sample std (n-1) of run-level means.

    A single run reports std 0.0 by convention.
    """

    mean: dict[str, dict[str, float]]
    std: dict[str, dict[str, float]]
    n_runs: int
    runs: list[dict] = field(default_factory=list, repr=False)

    def cell(self, region: str, metric: str, scale: float = 1.0) -> str:
        try:
            m, s = self.mean[region][metric], self.std[region][metric]
        except KeyError:
            return "—"
        return format_mean_std(m * scale, s * scale)

    def to_dict(self) -> dict:
        return {"n_runs": self.n_runs, "mean": self.mean, "std": self.std, "runs": self.runs}

    @classmethod
    def from_dict(cls, d: dict) -> "AggregateReport":
        return cls(d["mean"], d["std"], d["n_runs"], d.get("runs", []))


def format_mean_std(mean: float | None, std: float | None) -> str:
    if mean is None or (isinstance(mean, float) and np.isnan(mean)):
        return "—"
    return f"{mean:.2f} ({(std or 0.0):.2f})"


def aggregate_means(runs: Sequence[Mapping[str, Mapping[str, float]]]) -> AggregateReport:
    if not runs:
        raise ValueError("aggregate needs at least one run")
    keys = {(r, m) for run in runs for r in run for m in run[r]}
    mean: dict[str, dict[str, float]] = {}
    std: dict[str, dict[str, float]] = {}
    for r, m in sorted(keys):
        vals = np.array([run[r][m] for run in runs if r in run and m in run[r]], dtype=float)
        mean.setdefault(r, {})[m] = float(vals.mean())
        std.setdefault(r, {})[m] = float(vals.std(ddof=1)) if len(vals) > 1 else 0.0
    return AggregateReport(mean, std, len(runs), [dict(run) for run in runs])


def aggregate(runs: Iterable[Sequence[MetricsReport]]) -> AggregateReport:
    """Aggregate per-case reports grouped by run (one group per seed)."""
    return aggregate_means([run_means(list(r)) for r in runs])
