"""Spatial and intensity augmentation of training patches."""
from __future__ import annotations

from dataclasses import dataclass, replace, asdict

import numpy as np
from scipy import ndimage

from metseg.patching import PatchSample


@dataclass(frozen=True)
class AugmentationConfig:
    rotation: bool = True
    rotation_p: float = 0.2
    rotation_degrees: float = 30.0
    scaling: bool = True
    scaling_p: float = 0.2
    scale_range: tuple[float, float] = (0.7, 1.4)
    noise: bool = True
    noise_p: float = 0.1
    noise_variance: tuple[float, float] = (0.0, 0.1)
    smoothing: bool = True
    smoothing_p: float = 0.2
    smoothing_sigma: tuple[float, float] = (0.5, 1.0)
    mirror: bool = True
    mirror_p: float = 0.5
    low_resolution: bool = True
    low_resolution_p: float = 0.25
    low_resolution_factor: tuple[float, float] = (1.0, 2.0)

    def __post_init__(self):
        for name in ("rotation_p", "scaling_p", "noise_p", "smoothing_p", "mirror_p", "low_resolution_p"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1]")
        for name in ("scale_range", "noise_variance", "smoothing_sigma", "low_resolution_factor"):
            lo, hi = getattr(self, name)
            if lo > hi:
                raise ValueError(f"{name} must be ordered, got {(lo, hi)}")

    @classmethod
    def disabled(cls) -> "AugmentationConfig":
        return cls(rotation=False, scaling=False, noise=False, smoothing=False, mirror=False, low_resolution=False)

    def to_dict(self) -> dict:
        return asdict(self)


def _rotation_matrix(angles: np.ndarray) -> np.ndarray:
    mats = []
    for axis, a in enumerate(angles):
        c, s = np.cos(a), np.sin(a)
        i, j = [k for k in range(3) if k != axis]
        m = np.eye(3)
        m[i, i], m[i, j], m[j, i], m[j, j] = c, -s, s, c
        mats.append(m)
    return mats[0] @ mats[1] @ mats[2]


def spatial_transform(sample: PatchSample, matrix: np.ndarray) -> PatchSample:
    """Resample image (linear) and labels (nearest) with ``matrix`` about the patch centre."""
    shape = np.array(sample.data.shape[1:])
    center = (shape - 1) / 2.0
    offset = center - matrix @ center
    data = np.stack([
        ndimage.affine_transform(c, matrix, offset, order=1, mode="constant", cval=0.0)
        for c in sample.data
    ]).astype(sample.data.dtype)
    labels = sample.label_patch
    if labels is not None:
        labels = ndimage.affine_transform(labels, matrix, offset, order=0, mode="constant", cval=0)
    return replace(sample, data=data, label_patch=labels)


def mirror(sample: PatchSample, axes) -> PatchSample:
    """Flip spatial ``axes`` (0..2) of image and labels."""
    axes = tuple(axes)
    if not axes:
        return sample
    data = np.flip(sample.data, axis=tuple(a + 1 for a in axes)).copy()
    labels = None if sample.label_patch is None else np.flip(sample.label_patch, axis=axes).copy()
    return replace(sample, data=data, label_patch=labels)


def _simulate_low_resolution(data: np.ndarray, factor: float) -> np.ndarray:
    out = np.empty_like(data)
    shape = data.shape[1:]
    for c, chan in enumerate(data):
        small = ndimage.zoom(chan, 1.0 / factor, order=0)
        zoom_back = [s / t for s, t in zip(shape, small.shape)]
        out[c] = ndimage.zoom(small, zoom_back, order=3)[: shape[0], : shape[1], : shape[2]]
    return out


def augment(sample: PatchSample, cfg: AugmentationConfig, rng: np.random.Generator, min_fg: int = 1) -> PatchSample:
    """Randomly transform one patch; deterministic given ``rng``.

    Spatial transforms act on image and labels alike, intensity
    transforms on the image only. ``positive`` is recomputed.
    """
    out = sample
    matrix = np.eye(3)
    spatial = False
    if cfg.rotation and rng.random() < cfg.rotation_p:
        angles = np.deg2rad(rng.uniform(-cfg.rotation_degrees, cfg.rotation_degrees, size=3))
        matrix = _rotation_matrix(angles) @ matrix
        spatial = True
    if cfg.scaling and rng.random() < cfg.scaling_p:
        # output coordinate -> input coordinate, so zooming in by s samples at 1/s
        matrix = matrix / rng.uniform(*cfg.scale_range)
        spatial = True
    if spatial:
        out = spatial_transform(out, matrix)
    if cfg.mirror:
        axes = [a for a in range(3) if rng.random() < cfg.mirror_p]
        out = mirror(out, axes)

    data = out.data
    if cfg.noise and rng.random() < cfg.noise_p:
        std = np.sqrt(rng.uniform(*cfg.noise_variance))
        data = data + rng.normal(0.0, std, size=data.shape).astype(data.dtype)
    if cfg.smoothing and rng.random() < cfg.smoothing_p:
        sigma = rng.uniform(*cfg.smoothing_sigma)
        data = np.stack([ndimage.gaussian_filter(c, sigma) for c in data])
    if cfg.low_resolution and rng.random() < cfg.low_resolution_p:
        data = _simulate_low_resolution(data, rng.uniform(*cfg.low_resolution_factor))
    if data is not out.data:
        out = replace(out, data=data.astype(sample.data.dtype, copy=False))

    if out.label_patch is not None:
        out = replace(out, positive=int(np.count_nonzero(out.label_patch)) >= min_fg)
    return out
