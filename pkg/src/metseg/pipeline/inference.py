"""Sliding-window and detector-gated two-stage inference."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from typing import Literal, Sequence

import numpy as np
import torch

from metseg.data.volumes import LabelVolume, MultiModalVolume
from metseg.exceptions import ConfigError
from metseg.models.checkpoint import Checkpoint
from metseg.models.decode import regions_to_labels
from metseg.models.detector import DenseNet3D, as_tensor
from metseg.models.segmentor import ResidualUNet3D
from metseg.patching import BlendAccumulator, PatchCoord, PatchSpec, extract_patch, tile_grid
from metseg.pipeline.cost import CostReport, volume_cost_report

log = logging.getLogger(__name__)


def _batches(items: Sequence, size: int):
    for i in range(0, len(items), size):
        yield items[i : i + size]


def _image(image) -> np.ndarray:
    data = image if isinstance(image, np.ndarray) else image.data
    return np.asarray(data, dtype=np.float32)


def detector_patch_probs(
    model: DenseNet3D, image, coords: Sequence[PatchCoord], size, batch_size: int = 4
) -> np.ndarray:
    """Detector probability for each patch in ``coords``."""
    data = _image(image)
    model.eval()
    out = []
    with torch.no_grad():
        for chunk in _batches(list(coords), batch_size):
            x = np.stack([extract_patch(data, c, size) for c in chunk])
            out.append(torch.sigmoid(model(as_tensor(x))).numpy())
    return np.concatenate(out) if out else np.zeros(0, dtype=np.float32)


def segment_patches(
    model: ResidualUNet3D, image, coords: Sequence[PatchCoord], size, batch_size: int = 2
) -> list[tuple[PatchCoord, np.ndarray]]:
    """Region probabilities ``[3, s, s, s]`` for each patch in ``coords``."""
    data = _image(image)
    model.eval()
    out = []
    with torch.no_grad():
        for chunk in _batches(list(coords), batch_size):
            x = np.stack([extract_patch(data, c, size) for c in chunk])
            probs = torch.sigmoid(model(as_tensor(x))).numpy()
            out.extend(zip(chunk, probs))
    return out


def sliding_window_regions(
    model: ResidualUNet3D,
    image,
    spec: PatchSpec,
    weighting: Literal["uniform", "gaussian"] = "gaussian",
    batch_size: int = 2,
) -> np.ndarray:
    """Ungated sliding-window region probabilities ``[3, D, H, W]``."""
    data = _image(image)
    coords = tile_grid(data.shape[1:], spec)
    acc = BlendAccumulator.create(model.config.out_channels, data.shape[1:], spec.size, weighting)
    for coord, probs in segment_patches(model, data, coords, spec.size, batch_size):
        acc.add(coord, probs)
    return acc.finalize()


def segment_volume(model: ResidualUNet3D, vol: MultiModalVolume, spec: PatchSpec, weighting="gaussian", batch_size: int = 2) -> LabelVolume:
    probs = sliding_window_regions(model, vol, spec, weighting, batch_size)
    return regions_to_labels(probs, spacing=vol.spacing, affine=vol.affine, case_id=vol.case_id)


@dataclass(frozen=True)
class GateSettings:
    """Inference-time knobs of the two-stage pipeline.

    ``threshold <= 0`` flags every patch and ``threshold >= 1`` flags none,
    independent of floating-point saturation of the detector output.
    ``unflagged="zeros"`` blends explicit zero predictions for unflagged
    patches instead of giving them zero weight.
    """

    spec: PatchSpec = field(default_factory=PatchSpec)
    threshold: float = 0.5
    weighting: Literal["uniform", "gaussian"] = "gaussian"
    unflagged: Literal["ignore", "zeros"] = "ignore"
    batch_size: int = 2
    region_thresholds: tuple[float, float, float] = (0.5, 0.5, 0.5)

    def flags(self, probs: np.ndarray) -> np.ndarray:
        if self.threshold <= 0:
            return np.ones(len(probs), dtype=bool)
        if self.threshold >= 1:
            return np.zeros(len(probs), dtype=bool)
        return probs >= self.threshold


@dataclass
class GatedResult:
    labels: LabelVolume
    cost: CostReport
    region_probs: np.ndarray = field(repr=False)
    patch_probs: np.ndarray = field(repr=False)
    flagged: list[PatchCoord] = field(repr=False)


def _as_model(obj, kind: str, modalities: Sequence[str] | None):
    if isinstance(obj, Checkpoint):
        if obj.kind != kind:
            raise ConfigError(f"expected a {kind} checkpoint, got {obj.kind}")
        if modalities is not None and obj.modalities and tuple(obj.modalities) != tuple(modalities):
            raise ConfigError(
                f"{kind} checkpoint trained on modalities {list(obj.modalities)}, "
                f"run configured for {list(modalities)}"
            )
        return obj.build_model()
    if obj is None:
        raise ConfigError(f"no {kind} model or checkpoint given")
    return obj


def run_gated_inference(
    vol: MultiModalVolume,
    detector: DenseNet3D | Checkpoint,
    segmentor: ResidualUNet3D | Checkpoint,
    settings: GateSettings = GateSettings(),
) -> GatedResult:
    """Detect on every patch, segment flagged patches only, blend and decode.

    Unflagged patches contribute nothing, so any voxel covered only by
    unflagged patches decodes to background.
    """
    mods = [m.value for m in vol.modalities]
    det = _as_model(detector, "detector", mods)
    seg = _as_model(segmentor, "segmentor", mods)
    spec = settings.spec
    data = _image(vol)
    shape = data.shape[1:]
    coords = tile_grid(shape, spec)
    probs = detector_patch_probs(det, data, coords, spec.size, settings.batch_size)
    flags = settings.flags(probs)
    flagged = [c for c, f in zip(coords, flags) if f]
    if not flagged:
        log.warning("%s: detector flagged no patches; output is all background", vol.case_id or "case")

    acc = BlendAccumulator.create(seg.config.out_channels, shape, spec.size, settings.weighting)
    segmented = segment_patches(seg, data, flagged, spec.size, settings.batch_size)
    for coord, p in segmented:
        acc.add(coord, p)
    if settings.unflagged == "zeros":
        zero = np.zeros((seg.config.out_channels, *spec.size))
        for coord, f in zip(coords, flags):
            if not f:
                acc.add(coord, zero)
    region_probs = acc.finalize()
    labels = regions_to_labels(
        region_probs, settings.region_thresholds, vol.spacing, vol.affine, vol.case_id
    )
    cost = replace(
        volume_cost_report(shape, len(flagged), det.config, seg.config, spec),
        segmentor_invocations=len(segmented),
    )
    return GatedResult(labels, cost, region_probs, probs, flagged)
