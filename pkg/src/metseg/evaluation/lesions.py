"""Connected-component lesions and gt/prediction lesion matching."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from metseg.exceptions import ShapeError

_CONNECTIVITY_RANK = {6: 1, 18: 2, 26: 3}


def structure_for(connectivity: int) -> np.ndarray:
    try:
        return ndimage.generate_binary_structure(3, _CONNECTIVITY_RANK[connectivity])
    except KeyError:
        raise ValueError(f"connectivity must be one of 6, 18, 26, got {connectivity}") from None


@dataclass(frozen=True)
class MatchConfig:
    connectivity: int = 26
    dilation: int = 3
    min_size: int = 2
    hd95_penalty: float = 374.0

    def __post_init__(self):
        structure_for(self.connectivity)
        if self.dilation < 0:
            raise ValueError("dilation must be >= 0")
        if self.min_size < 1:
            raise ValueError("min_size must be >= 1")
        if self.hd95_penalty <= 0:
            raise ValueError("hd95_penalty must be > 0")


@dataclass(frozen=True)
class LesionSet:
    """Components stored as a label map: component ``i`` has value ``i + 1``.

    Components are numbered by their minimum linear voxel index.
    """

    label_map: np.ndarray
    count: int
    connectivity: int = 26
    sizes: np.ndarray = field(default=None, repr=False)

    @property
    def shape(self) -> tuple[int, ...]:
        return self.label_map.shape

    def __len__(self) -> int:
        return self.count

    def mask(self, i: int) -> np.ndarray:
        return self.label_map == i + 1

    @property
    def components(self) -> list[np.ndarray]:
        """Voxel coordinates ``[n, 3]`` of each component."""
        return [np.argwhere(self.mask(i)) for i in range(self.count)]

    def union(self) -> np.ndarray:
        return self.label_map > 0


def connected_components(mask: np.ndarray, connectivity: int = 26) -> LesionSet:
    mask = np.asarray(mask, dtype=bool)
    # scipy labels in raster order, i.e. by first (minimum) linear index
    label_map, count = ndimage.label(mask, structure=structure_for(connectivity))
    sizes = np.bincount(label_map.ravel(), minlength=count + 1)[1:]
    return LesionSet(label_map, int(count), connectivity, sizes)


def filter_small(ls: LesionSet, min_size: int) -> LesionSet:
    keep = np.flatnonzero(ls.sizes >= min_size)
    if len(keep) == ls.count:
        return ls
    remap = np.zeros(ls.count + 1, dtype=ls.label_map.dtype)
    remap[keep + 1] = np.arange(1, len(keep) + 1)
    return LesionSet(remap[ls.label_map], len(keep), ls.connectivity, ls.sizes[keep])


def lesions(mask: np.ndarray, cfg: MatchConfig) -> LesionSet:
    """Components of ``mask`` under ``cfg``, with small ones removed."""
    return filter_small(connected_components(mask, cfg.connectivity), cfg.min_size)


@dataclass
class MatchResult:
    """``pairs[i] = (gt component index, indices of supporting pred components)``."""

    gt: LesionSet
    pred: LesionSet
    pairs: list[tuple[int, list[int]]]
    fn: list[int]
    fp: list[int]

    @property
    def tp_count(self) -> int:
        return len(self.pairs)

    @property
    def fn_count(self) -> int:
        return len(self.fn)

    @property
    def fp_count(self) -> int:
        return len(self.fp)

    def pair_masks(self, i: int) -> tuple[np.ndarray, np.ndarray]:
        """Full-volume ``(gt lesion, corresponding prediction)`` masks of pair ``i``."""
        g, preds = self.pairs[i]
        return self.gt.mask(g), np.isin(self.pred.label_map, np.asarray(preds) + 1)


def match_lesions(pred_ls: LesionSet, gt_ls: LesionSet, cfg: MatchConfig = MatchConfig()) -> MatchResult:
    """Pair every gt lesion with all pred lesions touching its dilation.

    A gt lesion whose dilation (``cfg.dilation`` iterations of the
    26-neighbourhood) hits no prediction is a false negative; predictions
    touching no dilated gt lesion are false positives.
    """
    if pred_ls.shape != gt_ls.shape:
        raise ShapeError(f"shape mismatch pred {pred_ls.shape} vs gt {gt_ls.shape}")
    ball = ndimage.generate_binary_structure(3, 3)
    pairs, fn = [], []
    supporting: set[int] = set()
    for g in range(gt_ls.count):
        region = gt_ls.mask(g)
        if cfg.dilation > 0:
            # only the bounding box plus the dilation margin can change
            sl = _padded_bbox(region, cfg.dilation)
            grown = ndimage.binary_dilation(region[sl], ball, iterations=cfg.dilation)
            hits = np.unique(pred_ls.label_map[sl][grown])
        else:
            hits = np.unique(pred_ls.label_map[region])
        hits = [int(h) - 1 for h in hits if h > 0]
        if hits:
            pairs.append((g, hits))
            supporting.update(hits)
        else:
            fn.append(g)
    fp = [p for p in range(pred_ls.count) if p not in supporting]
    return MatchResult(gt_ls, pred_ls, pairs, fn, fp)


def _padded_bbox(mask: np.ndarray, pad: int) -> tuple[slice, ...]:
    idx = np.argwhere(mask)
    lo = np.maximum(idx.min(axis=0) - pad, 0)
    hi = np.minimum(idx.max(axis=0) + pad + 1, mask.shape)
    return tuple(slice(a, b) for a, b in zip(lo, hi))
