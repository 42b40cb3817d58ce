"""Glue between a :class:`PipelineConfig` and the data, training and evaluation modules."""
from __future__ import annotations

import logging
from pathlib import Path
from typing import Sequence

from metseg.data.dataset import DatasetIndex, discover_dataset, load_case
from metseg.data.synthetic import generate_synthetic
from metseg.data.volumes import ALL_MODALITIES, LabelVolume, ModalityId, MultiModalVolume, normalize, parse_modalities
from metseg.evaluation.report import MetricsReport, evaluate_case
from metseg.exceptions import ConfigError
from metseg.models.checkpoint import Checkpoint
from metseg.pipeline.config import PipelineConfig
from metseg.pipeline.cost import CostReport
from metseg.pipeline.inference import run_gated_inference
from metseg.training.loops import train_detector, train_segmentor

log = logging.getLogger(__name__)

Case = tuple[MultiModalVolume, LabelVolume]

INDEX_FILE = "index.json"


def dataset_index(cfg: PipelineConfig, modalities: Sequence[ModalityId] | None = None) -> DatasetIndex:
    """Saved ``index.json`` under the data root if present, else a fresh discovery."""
    if cfg.data_root is None:
        raise ConfigError("data_root is not set")
    saved = Path(cfg.data_root) / INDEX_FILE
    if saved.is_file():
        return DatasetIndex.load(saved)
    return discover_dataset(cfg.data_root, modalities or parse_modalities(cfg.modalities), cfg.split)


def load_cases(
    cfg: PipelineConfig,
    split: str = "train",
    modalities: Sequence[ModalityId] | str | None = None,
) -> list[Case]:
    """Normalized cases restricted to ``modalities`` (default: the config's subset).

    Without ``data_root`` the config's synthetic set is used, and every
    split name returns the whole set.
    """
    mods = parse_modalities(modalities if modalities is not None else cfg.modalities)
    if cfg.data_root is None:
        cases = generate_synthetic(cfg.synthetic_spec())
        return [(normalize(v.select(mods)), lab) for v, lab in cases]
    index = dataset_index(cfg, mods)
    out = []
    for entry in index.split(split):
        vol, lab = load_case(entry, mods)
        out.append((normalize(vol), lab))
    return out


def available_modalities(cfg: PipelineConfig) -> tuple[ModalityId, ...]:
    if cfg.data_root is None:
        return ALL_MODALITIES
    return tuple(dataset_index(cfg).modalities)


def select_cases(cases: Sequence[Case], modalities) -> list[Case]:
    mods = parse_modalities(modalities)
    return [(vol.select(mods), lab) for vol, lab in cases]


def train_two_stage(
    cfg: PipelineConfig,
    cases: Sequence[Case],
    seed: int,
    out_dir: str | Path | None = None,
    val_cases: Sequence[Case] | None = None,
    det_epochs: int | None = None,
    seg_iterations: int | None = None,
) -> tuple[Checkpoint, Checkpoint]:
    """Train the detector and the segmentor independently with one seed."""
    det_epochs = det_epochs or cfg.det_epochs
    seg_iterations = seg_iterations or cfg.seg_iterations
    out_dir = Path(out_dir) if out_dir is not None else None
    det = train_detector(
        cases,
        cfg.detector_config(),
        cfg.adam(),
        cfg.detector_schedule(det_epochs),
        epochs=det_epochs,
        batch_size=cfg.det_batch_size,
        crops_per_patient=cfg.det_crops_per_patient,
        fg_fraction=cfg.fg_fraction,
        seed=seed,
        val_cases=val_cases,
        augmentation=cfg.augmentation_config(),
        min_fg=cfg.min_fg,
        val_every=cfg.det_val_every,
        stride=cfg.stride,
        out_dir=out_dir,
    )
    seg = train_segmentor(
        cases,
        cfg.segmentor_config(),
        cfg.sgd(),
        cfg.segmentor_schedule(seg_iterations),
        iterations=seg_iterations,
        batch_size=cfg.seg_batch_size,
        iters_per_epoch=cfg.seg_iters_per_epoch,
        fg_fraction=cfg.fg_fraction,
        seed=seed,
        augmentation=cfg.augmentation_config(),
        out_dir=out_dir,
    )
    return det, seg


def evaluate_two_stage(
    cfg: PipelineConfig,
    detector: Checkpoint,
    segmentor: Checkpoint,
    cases: Sequence[Case],
    include_labels: bool = True,
) -> tuple[list[MetricsReport], list[CostReport]]:
    """Gated inference and per-case metrics over ``cases``."""
    settings = cfg.gate_settings()
    mcfg = cfg.match_config()
    reports, costs = [], []
    for vol, lab in cases:
        result = run_gated_inference(vol, detector, segmentor, settings)
        reports.append(evaluate_case(result.labels, lab, mcfg, include_labels))
        costs.append(result.cost)
    return reports, costs
