"""Flat, versioned run configuration shared by every CLI subcommand.

A config file is a single YAML or JSON mapping whose keys are the field
names of :class:`PipelineConfig`. Unknown keys are rejected so typos fail
loudly. ``config_version`` guards against silently reading old files.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Any, Mapping

import yaml

from metseg.data.dataset import DEFAULT_SPLIT
from metseg.data.synthetic import SyntheticSpec
from metseg.data.volumes import parse_modalities
from metseg.evaluation.lesions import MatchConfig
from metseg.exceptions import ConfigError
from metseg.models.detector import DetectorConfig
from metseg.models.segmentor import SegmentorConfig
from metseg.patching import PatchSpec
from metseg.pipeline.inference import GateSettings
from metseg.training.augment import AugmentationConfig
from metseg.training.schedules import AdamConfig, PolySchedule, SGDConfig, WarmupCosineSchedule

CONFIG_VERSION = 1


@dataclass(frozen=True)
class PipelineConfig:
    config_version: int = CONFIG_VERSION
    # data
    data_root: str | None = None
    modalities: str = "t1c,t1,f"
    split: tuple[float, float, float] = DEFAULT_SPLIT
    synth_cases: int = 8
    synth_shape: tuple[int, int, int] = (48, 48, 48)
    synth_seed: int = 0
    # patching and gating
    patch_size: int = 64
    stride: int = 32
    min_fg: int = 1
    fg_fraction: float = 0.5
    det_threshold: float = 0.5
    weighting: str = "gaussian"
    unflagged: str = "ignore"
    region_thresholds: tuple[float, float, float] = (0.5, 0.5, 0.5)
    infer_batch_size: int = 2
    # detector
    det_growth_rate: int = 32
    det_block_layers: tuple[int, ...] = (6, 12, 24, 16)
    det_init_features: int = 64
    det_stem_kernel: int = 7
    det_stem_stride: int = 2
    det_stem_pool: bool = True
    det_epochs: int = 400
    det_batch_size: int = 2
    det_crops_per_patient: int = 5
    det_start_lr: float = 1e-6
    det_peak_lr: float = 4e-4
    det_warmup_epochs: int = 10
    det_val_every: int = 1
    # segmentor
    seg_n_stages: int = 5
    seg_base_features: int = 32
    seg_max_features: int = 320
    seg_blocks_per_stage: int = 2
    seg_deep_supervision: int = 3
    seg_iterations: int = 250_000
    seg_batch_size: int = 2
    seg_iters_per_epoch: int = 250
    seg_lr: float = 0.01
    seg_momentum: float = 0.99
    seg_weight_decay: float = 3e-5
    augmentation: bool = True
    # evaluation
    connectivity: int = 26
    dilation: int = 3
    min_size: int = 2
    hd95_penalty: float = 374.0
    # runs
    seeds: tuple[int, ...] = (0, 1, 2)
    detector_ckpt: str | None = None
    segmentor_ckpt: str | None = None
    out_dir: str = "runs"
    # ablation budget, applied on top of the fields above
    ablation_det_epochs: int = 2
    ablation_seg_iterations: int = 20
    ablation_subsets: tuple[str, ...] = ()

    def __post_init__(self):
        if self.config_version != CONFIG_VERSION:
            raise ConfigError(
                f"config_version {self.config_version} is not supported (expected {CONFIG_VERSION})"
            )
        if isinstance(self.synth_shape, int):
            object.__setattr__(self, "synth_shape", (self.synth_shape,) * 3)
        for name in ("split", "synth_shape", "region_thresholds", "det_block_layers", "seeds", "ablation_subsets"):
            value = getattr(self, name)
            if isinstance(value, (list, tuple)):
                object.__setattr__(self, name, tuple(value))
        try:
            parse_modalities(self.modalities)
            for subset in self.ablation_subsets:
                parse_modalities(subset)
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        if not 0.0 <= self.det_threshold <= 1.0:
            raise ConfigError(f"det_threshold must lie in [0, 1], got {self.det_threshold}")
        if self.weighting not in ("uniform", "gaussian"):
            raise ConfigError(f"weighting must be 'uniform' or 'gaussian', got {self.weighting!r}")
        if self.unflagged not in ("ignore", "zeros"):
            raise ConfigError(f"unflagged must be 'ignore' or 'zeros', got {self.unflagged!r}")
        if not self.seeds:
            raise ConfigError("seeds must be non-empty")
        if self.stride < 1 or self.stride > self.patch_size:
            raise ConfigError(f"stride must lie in [1, patch_size], got {self.stride}")
        try:
            self.synthetic_spec()
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"invalid synthetic settings: {exc}") from None

    # -- io -------------------------------------------------------------

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "PipelineConfig":
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(d) - known)
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
        try:
            return cls(**dict(d))
        except TypeError as exc:
            raise ConfigError(str(exc)) from None

    @classmethod
    def load(cls, path: str | Path) -> "PipelineConfig":
        path = Path(path)
        if not path.is_file():
            raise ConfigError(f"config file not found: {path}")
        text = path.read_text()
        data = json.loads(text) if path.suffix == ".json" else yaml.safe_load(text)
        if data is None:
            data = {}
        if not isinstance(data, dict):
            raise ConfigError(f"{path}: expected a mapping at top level")
        return cls.from_dict(data)

    def to_dict(self) -> dict:
        d = asdict(self)
        return {k: list(v) if isinstance(v, tuple) else v for k, v in d.items()}

    def save(self, path: str | Path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        if path.suffix == ".json":
            path.write_text(json.dumps(self.to_dict(), indent=2))
        else:
            path.write_text(yaml.safe_dump(self.to_dict(), sort_keys=False))
        return path

    def override(self, **changes) -> "PipelineConfig":
        """Copy with ``changes`` applied, skipping ``None`` values."""
        changes = {k: v for k, v in changes.items() if v is not None}
        unknown = sorted(set(changes) - {f.name for f in fields(self)})
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
        return replace(self, **changes)

    # -- builders -------------------------------------------------------

    @property
    def n_channels(self) -> int:
        return len(parse_modalities(self.modalities))

    def patch_spec(self) -> PatchSpec:
        return PatchSpec((self.patch_size,) * 3, (self.stride,) * 3)

    def match_config(self) -> MatchConfig:
        return MatchConfig(self.connectivity, self.dilation, self.min_size, self.hd95_penalty)

    def detector_config(self) -> DetectorConfig:
        return DetectorConfig(
            in_channels=self.n_channels,
            growth_rate=self.det_growth_rate,
            block_layers=self.det_block_layers,
            init_features=self.det_init_features,
            patch_size=self.patch_size,
            stem_kernel=self.det_stem_kernel,
            stem_stride=self.det_stem_stride,
            stem_pool=self.det_stem_pool,
        )

    def segmentor_config(self) -> SegmentorConfig:
        return SegmentorConfig(
            in_channels=self.n_channels,
            n_stages=self.seg_n_stages,
            base_features=self.seg_base_features,
            max_features=self.seg_max_features,
            blocks_per_stage=self.seg_blocks_per_stage,
            deep_supervision_levels=self.seg_deep_supervision,
            patch_size=self.patch_size,
        )

    def detector_schedule(self, epochs: int | None = None) -> WarmupCosineSchedule:
        epochs = epochs or self.det_epochs
        return WarmupCosineSchedule(
            start_lr=self.det_start_lr,
            peak_lr=self.det_peak_lr,
            warmup_epochs=min(self.det_warmup_epochs, max(epochs - 1, 0)),
            max_epoch=epochs,
        )

    def adam(self) -> AdamConfig:
        return AdamConfig(lr=self.det_peak_lr)

    def sgd(self) -> SGDConfig:
        return SGDConfig(base_lr=self.seg_lr, momentum=self.seg_momentum, weight_decay=self.seg_weight_decay)

    def segmentor_schedule(self, iterations: int | None = None) -> PolySchedule:
        iterations = iterations or self.seg_iterations
        return PolySchedule(base_lr=self.seg_lr, max_epoch=-(-iterations // self.seg_iters_per_epoch))

    def augmentation_config(self) -> AugmentationConfig | None:
        return AugmentationConfig() if self.augmentation else None

    def gate_settings(self) -> GateSettings:
        return GateSettings(
            spec=self.patch_spec(),
            threshold=self.det_threshold,
            weighting=self.weighting,
            unflagged=self.unflagged,
            batch_size=self.infer_batch_size,
            region_thresholds=self.region_thresholds,
        )

    def synthetic_spec(self, seed: int | None = None) -> SyntheticSpec:
        return SyntheticSpec(
            n_cases=self.synth_cases,
            shape=self.synth_shape,
            seed=self.synth_seed if seed is None else seed,
        )
