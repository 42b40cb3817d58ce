"""Sliding-window tiling, training crops and overlap blending."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Literal, Sequence

import numpy as np

from metseg.exceptions import ShapeError

Triple = tuple[int, int, int]


def _triple(v) -> Triple:
    if np.isscalar(v):
        return (int(v),) * 3
    t = tuple(int(x) for x in v)
    if len(t) != 3:
        raise ValueError(f"expected 3 values, got {v}")
    return t


@dataclass(frozen=True)
class PatchSpec:
    size: Triple = (64, 64, 64)
    stride: Triple = (32, 32, 32)

    def __post_init__(self):
        size, stride = _triple(self.size), _triple(self.stride)
        if not all(0 < st <= sz for st, sz in zip(stride, size)):
            raise ValueError(f"need 0 < stride <= size, got size={size} stride={stride}")
        object.__setattr__(self, "size", size)
        object.__setattr__(self, "stride", stride)


@dataclass(frozen=True, order=True)
class PatchCoord:
    origin: Triple

    def slices(self, size: Triple) -> tuple[slice, ...]:
        return tuple(slice(o, o + s) for o, s in zip(self.origin, size))


@dataclass
class PatchSample:
    data: np.ndarray
    label_patch: np.ndarray | None
    positive: bool
    origin: Triple = (0, 0, 0)


def _axis_positions(n: int, size: int, stride: int) -> list[int]:
    if n <= size:
        return [0]
    last = n - size
    pos = list(range(0, last + 1, stride))
    if pos[-1] != last:
        pos.append(last)
    return pos


def tile_grid(shape: Sequence[int], spec: PatchSpec = PatchSpec()) -> list[PatchCoord]:
    """Overlapping grid covering every voxel, in lexicographic (z, y, x) order.

    The last position on each axis is clamped so the patch ends at the
    volume edge; an axis shorter than the patch gets the single origin 0.
    """
    shape = _triple(shape)
    if min(shape) <= 0:
        raise ValueError(f"shape must be positive, got {shape}")
    axes = [_axis_positions(n, s, st) for n, s, st in zip(shape, spec.size, spec.stride)]
    return [PatchCoord((z, y, x)) for z in axes[0] for y in axes[1] for x in axes[2]]


def extract_patch(vol: np.ndarray, coord: PatchCoord, size: Sequence[int]) -> np.ndarray:
    """Copy the patch at ``coord`` from the last three axes of ``vol``.

    Parts falling outside the volume are zero.
    """
    size = _triple(size)
    lead = vol.shape[:-3]
    out = np.zeros((*lead, *size), dtype=vol.dtype)
    src, dst = [], []
    for o, s, n in zip(coord.origin, size, vol.shape[-3:]):
        hi = min(o + s, n)
        src.append(slice(o, hi))
        dst.append(slice(0, max(hi - o, 0)))
    out[(..., *dst)] = vol[(..., *src)]
    return out


def label_patch(labels: np.ndarray, coord: PatchCoord, size: Sequence[int] = (64, 64, 64), min_fg: int = 1) -> bool:
    """True iff the patch holds at least ``min_fg`` foreground voxels."""
    size = _triple(size)
    region = labels[coord.slices(size)]
    return int(np.count_nonzero(region)) >= min_fg


def _array(x) -> np.ndarray:
    # volume containers expose .data; a bare ndarray's .data is a memoryview
    return x if isinstance(x, np.ndarray) else np.asarray(x.data)


def _valid_origin_range(shape: Triple, size: Triple) -> Triple:
    return tuple(max(n - s, 0) for n, s in zip(shape, size))


def sample_crop_origin(labels: np.ndarray, size: Triple, force_fg: bool, rng: np.random.Generator) -> Triple:
    hi = _valid_origin_range(labels.shape, size)
    if force_fg:
        fg = np.flatnonzero(labels.ravel())
        if len(fg):
            center = np.unravel_index(fg[rng.integers(len(fg))], labels.shape)
            return tuple(int(min(max(c - s // 2, 0), h)) for c, s, h in zip(center, size, hi))
    return tuple(int(rng.integers(0, h + 1)) for h in hi)


def sample_training_crops(
    case,
    n: int = 5,
    fg_fraction: float = 0.5,
    rng: np.random.Generator | int | None = None,
    size: Sequence[int] = (64, 64, 64),
    min_fg: int = 1,
) -> list[PatchSample]:
    """Draw ``n`` crops, the first ``ceil(fg_fraction * n)`` centred on foreground.

    ``case`` is a ``(MultiModalVolume, LabelVolume)`` pair or raw arrays.
    Without foreground every crop is uniform over valid origins.
    """
    if not 0.0 <= fg_fraction <= 1.0:
        raise ValueError(f"fg_fraction must lie in [0, 1], got {fg_fraction}")
    rng = np.random.default_rng(rng)
    size = _triple(size)
    image, labels = case
    image, labels = _array(image), _array(labels)
    n_fg = math.ceil(fg_fraction * n)
    crops = []
    for i in range(n):
        coord = PatchCoord(sample_crop_origin(labels, size, i < n_fg, rng))
        lab = extract_patch(labels, coord, size)
        crops.append(
            PatchSample(extract_patch(image, coord, size), lab, int(np.count_nonzero(lab)) >= min_fg, coord.origin)
        )
    return crops


def gaussian_weights(size: Sequence[int], sigma_scale: float = 1.0 / 8) -> np.ndarray:
    """Separable Gaussian centred in the patch, ``sigma = size / 8``, peak 1."""
    size = _triple(size)
    axes = []
    for s in size:
        x = np.arange(s, dtype=np.float64) - (s - 1) / 2.0
        sigma = s * sigma_scale
        axes.append(np.exp(-0.5 * (x / sigma) ** 2))
    w = axes[0][:, None, None] * axes[1][None, :, None] * axes[2][None, None, :]
    return w / w.max()


@dataclass
class BlendAccumulator:
    """Running weighted sums for overlap blending."""

    value_sum: np.ndarray
    weight_sum: np.ndarray
    patch_weights: np.ndarray = field(repr=False)

    @classmethod
    def create(
        cls,
        n_channels: int,
        shape: Sequence[int],
        size: Sequence[int],
        weighting: Literal["uniform", "gaussian"] = "gaussian",
    ) -> "BlendAccumulator":
        shape, size = _triple(shape), _triple(size)
        if weighting == "gaussian":
            w = gaussian_weights(size)
        elif weighting == "uniform":
            w = np.ones(size)
        else:
            raise ValueError(f"unknown weighting {weighting!r}")
        return cls(np.zeros((n_channels, *shape)), np.zeros(shape), w)

    def add(self, coord: PatchCoord, probs: np.ndarray) -> None:
        size = self.patch_weights.shape
        if probs.ndim != 4 or probs.shape[0] != self.value_sum.shape[0] or probs.shape[1:] != size:
            raise ShapeError(
                f"contribution shape {probs.shape} does not match "
                f"[{self.value_sum.shape[0]}, {size[0]}, {size[1]}, {size[2]}]"
            )
        dst, src = [], []
        for o, s, n in zip(coord.origin, size, self.weight_sum.shape):
            hi = min(o + s, n)
            dst.append(slice(o, hi))
            src.append(slice(0, hi - o))
        w = self.patch_weights[tuple(src)]
        self.value_sum[(slice(None), *dst)] += probs[(slice(None), *src)] * w
        self.weight_sum[tuple(dst)] += w

    def finalize(self) -> np.ndarray:
        out = np.zeros_like(self.value_sum)
        covered = self.weight_sum > 0
        out[:, covered] = self.value_sum[:, covered] / self.weight_sum[covered]
        return out


def blend_patches(
    contributions: Iterable[tuple[PatchCoord, np.ndarray]],
    shape: Sequence[int],
    weighting: Literal["uniform", "gaussian"] = "gaussian",
    size: Sequence[int] | None = None,
    n_channels: int | None = None,
) -> np.ndarray:
    """Weighted average of overlapping ``[K, s, s, s]`` patch predictions.

    Voxels no contribution covers are 0.
    """
    contributions = list(contributions)
    if not contributions:
        if size is None or n_channels is None:
            raise ValueError("empty contributions need explicit size and n_channels")
        return np.zeros((n_channels, *_triple(shape)))
    first = np.asarray(contributions[0][1])
    n_channels = first.shape[0] if n_channels is None else n_channels
    size = first.shape[1:] if size is None else size
    acc = BlendAccumulator.create(n_channels, shape, size, weighting)
    for coord, probs in contributions:
        acc.add(coord, np.asarray(probs))
    return acc.finalize()
