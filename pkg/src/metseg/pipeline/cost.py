"""Compute-cost accounting for gated versus ungated inference."""
from __future__ import annotations

from dataclasses import dataclass, asdict
from typing import Sequence

from metseg.models.detector import DetectorConfig
from metseg.models.flops import estimate_flops
from metseg.models.segmentor import SegmentorConfig, reference_unet_config
from metseg.patching import PatchSpec, tile_grid


@dataclass(frozen=True)
class CostReport:
    total_patches: int
    flagged_patches: int
    detector_gflops: float
    segmentor_gflops: float
    baseline_gflops: float
    reduction: float
    segmentor_invocations: int
    assumptions: str = ""

    @property
    def gated_gflops(self) -> float:
        return self.detector_gflops + self.segmentor_gflops

    def to_dict(self) -> dict:
        d = asdict(self)
        d["gated_gflops"] = self.gated_gflops
        return d


def cost_report(
    n_total: int,
    n_flagged: int,
    detector_gflops_per_patch: float,
    segmentor_gflops_per_patch: float,
    baseline_gflops_per_window: float,
    baseline_windows: int = 1,
    assumptions: str = "",
) -> CostReport:
    """Gated cost = detector on every patch + segmentor on flagged patches.

    ``reduction = 1 - gated / baseline`` and may be negative.
    """
    if n_total < 0 or n_flagged < 0 or baseline_windows < 0:
        raise ValueError("counts must be non-negative")
    if n_flagged > n_total:
        raise ValueError(f"flagged ({n_flagged}) exceeds total ({n_total})")
    det = n_total * detector_gflops_per_patch
    seg = n_flagged * segmentor_gflops_per_patch
    base = baseline_windows * baseline_gflops_per_window
    reduction = 1.0 - (det + seg) / base if base > 0 else float("nan")
    return CostReport(n_total, n_flagged, det, seg, base, reduction, n_flagged, assumptions)


def baseline_windows(volume_shape: Sequence[int], window: int = 128) -> int:
    """Number of 50%-overlap reference windows covering ``volume_shape``."""
    return len(tile_grid(volume_shape, PatchSpec((window,) * 3, (window // 2,) * 3)))


def volume_cost_report(
    volume_shape: Sequence[int],
    n_flagged: int,
    detector: DetectorConfig,
    segmentor: SegmentorConfig,
    spec: PatchSpec,
    reference: SegmentorConfig | None = None,
) -> CostReport:
    """Cost of gated inference on one volume against the ungated reference grid."""
    reference = reference or reference_unet_config()
    n_total = len(tile_grid(volume_shape, spec))
    patch_shape = (detector.in_channels, *spec.size)
    ref_shape = (reference.in_channels, *(reference.patch_size,) * 3)
    return cost_report(
        n_total,
        n_flagged,
        estimate_flops(detector, patch_shape),
        estimate_flops(segmentor, (segmentor.in_channels, *spec.size)),
        estimate_flops(reference, ref_shape),
        baseline_windows(volume_shape, reference.patch_size),
        assumptions=(
            f"baseline: {reference.patch_size}^3 reference U-Net over its own 50%-overlap grid; "
            f"gated: detector on all {n_total} patches of size {spec.size}, segmentor on flagged ones; "
            "1 FLOP per multiply-accumulate, norms/activations excluded"
        ),
    )
