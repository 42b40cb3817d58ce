"""Per-split histograms of per-patient lesion counts."""
from __future__ import annotations

import json
import logging
from collections import Counter
from pathlib import Path

from metseg.data.dataset import DatasetIndex
from metseg.data.nifti import load_label_file
from metseg.data.volumes import LabelVolume, compose_regions
from metseg.evaluation.lesions import MatchConfig, lesions

log = logging.getLogger(__name__)


def lesion_count(labels: LabelVolume, cfg: MatchConfig = MatchConfig()) -> int:
    """Number of WT components that survive min-size filtering."""
    return len(lesions(compose_regions(labels).wt, cfg))


def dataset_stats(index: DatasetIndex, cfg: MatchConfig = MatchConfig()) -> dict:
    """Histogram ``{split: {count: n_patients}}`` plus per-case counts.

    A case that fails to load is recorded under ``failures`` and skipped.
    """
    histograms, per_case, failures = {}, {}, {}
    for split, ids in index.splits.items():
        hist: Counter = Counter()
        for cid in ids:
            entry = index.entry(cid)
            try:
                n = lesion_count(load_label_file(entry.label, cid), cfg)
            except Exception as exc:  # keep going, summarize at the end
                log.warning("stats: %s failed: %s", cid, exc)
                failures[cid] = str(exc)
                continue
            per_case[cid] = n
            hist[str(n)] += 1
        histograms[split] = dict(sorted(hist.items(), key=lambda kv: int(kv[0])))
    if failures:
        log.warning("stats: %d case(s) failed to load", len(failures))
    return {"histograms": histograms, "per_case": per_case, "failures": failures}


def save_stats(stats: dict, json_path: str | Path, plot_path: str | Path | None = None) -> None:
    json_path = Path(json_path)
    json_path.parent.mkdir(parents=True, exist_ok=True)
    json_path.write_text(json.dumps(stats, indent=2))
    if plot_path is not None:
        plot_histograms(stats, plot_path)


def plot_histograms(stats: dict, path: str | Path) -> Path:
    """Bar chart per split; format follows the file extension (svg/png)."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    hists = stats["histograms"]
    fig, axes = plt.subplots(1, max(len(hists), 1), figsize=(4 * max(len(hists), 1), 3), squeeze=False)
    for ax, (split, hist) in zip(axes[0], hists.items()):
        xs = [int(k) for k in hist]
        ax.bar(xs, list(hist.values()), color="tab:blue")
        ax.set_title(split)
        ax.set_xlabel("metastases per patient")
        ax.set_ylabel("patients")
    fig.tight_layout()
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path)
    plt.close(fig)
    return path
