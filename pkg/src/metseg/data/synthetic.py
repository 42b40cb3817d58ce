"""Seeded synthetic multi-modal cases with ellipsoidal lesions.

Only meant for desk-scale checks of the whole pipeline: every lesion is a
label-3 ellipsoid core wrapped in a one-voxel label-2 shell with a small
label-1 blob carved out of the core, so WT, TC and ET are all non-trivial.
"""
from __future__ import annotations

from dataclasses import dataclass, asdict
from pathlib import Path

import numpy as np
from scipy import ndimage

from metseg.data.dataset import DEFAULT_LABEL_SUFFIX, DEFAULT_SUFFIXES
from metseg.data.nifti import save_label_volume, save_volume_channels
from metseg.data.volumes import ALL_MODALITIES, LabelVolume, MultiModalVolume
from metseg.exceptions import DataError

_BALL = ndimage.generate_binary_structure(3, 3)

# Intensity offset per label, scaled per channel by CHANNEL_GAIN.
LESION_OFFSETS = {3: 1.0, 1: 0.6, 2: 0.4}
CHANNEL_GAIN = (0.8, 1.2, 0.9, 1.1)


@dataclass(frozen=True)
class SyntheticSpec:
    n_cases: int = 8
    shape: tuple[int, int, int] = (48, 48, 48)
    n_channels: int = 4
    lesion_count: tuple[int, int] = (1, 3)
    lesion_radius: tuple[float, float] = (3.0, 5.0)
    noise_std: float = 0.1
    seed: int = 0
    max_retries: int = 200

    def __post_init__(self):
        lo, hi = self.lesion_count
        rlo, rhi = self.lesion_radius
        if not 0 <= lo <= hi:
            raise DataError(f"invalid lesion_count range {self.lesion_count}")
        if not 0 < rlo <= rhi:
            raise DataError(f"lesion_radius range must be positive and ordered, got {self.lesion_radius}")
        if not 1 <= self.n_channels <= len(ALL_MODALITIES):
            raise DataError(f"n_channels must be in 1..{len(ALL_MODALITIES)}")
        if len(self.shape) != 3 or min(self.shape) < 2 * rhi + 6:
            raise DataError(f"shape {self.shape} too small for lesion radius {rhi}")

    def to_dict(self) -> dict:
        return asdict(self)


def _ellipsoid(shape, center, radii) -> np.ndarray:
    grids = np.ogrid[tuple(slice(0, s) for s in shape)]
    dist = sum(((g - c) / r) ** 2 for g, c, r in zip(grids, center, radii))
    return dist <= 1.0


def _place_lesions(spec: SyntheticSpec, rng: np.random.Generator, n: int) -> list[np.ndarray]:
    shape = spec.shape
    rlo, rhi = spec.lesion_radius
    reserved = np.zeros(shape, dtype=bool)
    cores = []
    for k in range(n):
        for _ in range(spec.max_retries):
            radii = rng.uniform(rlo, rhi, size=3)
            margin = np.ceil(radii).astype(int) + 2
            center = [rng.integers(m, s - m) for m, s in zip(margin, shape)]
            core = _ellipsoid(shape, center, radii)
            if not core.any():
                continue
            footprint = ndimage.binary_dilation(core, _BALL)
            if not (footprint & reserved).any():
                break
        else:
            raise DataError(
                f"could not place lesion {k + 1}/{n} without overlap after "
                f"{spec.max_retries} retries"
            )
        # core dilated by 2 keeps shells of neighbouring lesions non-adjacent
        reserved |= ndimage.binary_dilation(core, _BALL, iterations=2)
        cores.append(core)
    return cores


def _make_case(spec: SyntheticSpec, rng: np.random.Generator, case_id: str):
    shape = spec.shape
    lo, hi = spec.lesion_count
    n = int(rng.integers(lo, hi + 1))
    labels = np.zeros(shape, dtype=np.uint8)
    for core in _place_lesions(spec, rng, n):
        shell = ndimage.binary_dilation(core, _BALL) & ~core
        labels[shell] = 2
        labels[core] = 3
        # NETC: small ball around a random core voxel
        coords = np.argwhere(core)
        seed_vox = coords[rng.integers(len(coords))]
        r = max(1.0, spec.lesion_radius[0] / 2)
        blob = _ellipsoid(shape, seed_vox, (r, r, r)) & core
        labels[blob] = 1

    brain = _ellipsoid(shape, [(s - 1) / 2 for s in shape], [0.48 * s for s in shape])
    brain |= labels > 0
    data = np.zeros((spec.n_channels, *shape), dtype=np.float32)
    for c in range(spec.n_channels):
        chan = 1.0 + rng.normal(0.0, spec.noise_std, size=shape)
        for lab, offset in LESION_OFFSETS.items():
            chan[labels == lab] += offset * CHANNEL_GAIN[c]
        data[c] = np.where(brain, chan, 0.0)
    mods = ALL_MODALITIES[: spec.n_channels]
    return (
        MultiModalVolume(data, (1.0, 1.0, 1.0), mods, np.eye(4), case_id),
        LabelVolume(labels, (1.0, 1.0, 1.0), np.eye(4), case_id),
    )


def generate_synthetic(spec: SyntheticSpec) -> list[tuple[MultiModalVolume, LabelVolume]]:
    """Deterministic in ``spec.seed``; case ``i`` does not depend on ``n_cases``."""
    seeds = np.random.SeedSequence(spec.seed).spawn(spec.n_cases)
    return [
        _make_case(spec, np.random.default_rng(s), f"synth-{i:04d}")
        for i, s in enumerate(seeds)
    ]


def write_synthetic_dataset(
    root: str | Path,
    cases: list[tuple[MultiModalVolume, LabelVolume]],
    suffixes=None,
    label_suffix: str = DEFAULT_LABEL_SUFFIX,
) -> Path:
    """Write cases in the ``<id>/<id>-<suffix>.nii.gz`` dataset layout."""
    root = Path(root)
    suffixes = {**DEFAULT_SUFFIXES, **(suffixes or {})}
    for vol, lab in cases:
        cdir = root / vol.case_id
        save_volume_channels(cdir, vol, suffixes)
        save_label_volume(cdir / f"{vol.case_id}-{label_suffix}.nii.gz", lab)
    return root
