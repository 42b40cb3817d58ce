"""Legacy and lesion-wise DSC / HD95."""
from __future__ import annotations

from typing import Literal

import numpy as np
from scipy import ndimage

from metseg.evaluation.lesions import MatchConfig, MatchResult
from metseg.exceptions import ShapeError

_FACES = ndimage.generate_binary_structure(3, 1)


def _check_pair(pred: np.ndarray, gt: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    pred = np.asarray(pred, dtype=bool)
    gt = np.asarray(gt, dtype=bool)
    if pred.shape != gt.shape:
        raise ShapeError(f"shape mismatch pred {pred.shape} vs gt {gt.shape}")
    return pred, gt


def legacy_dsc(pred: np.ndarray, gt: np.ndarray) -> float:
    """``2|A∩B| / (|A|+|B|)``; two empty masks score 1.0."""
    pred, gt = _check_pair(pred, gt)
    total = int(pred.sum()) + int(gt.sum())
    if total == 0:
        return 1.0
    return 2.0 * int(np.count_nonzero(pred & gt)) / total


def boundary(mask: np.ndarray) -> np.ndarray:
    """Foreground voxels with a face neighbour in the background.

    Voxels on the array border count as boundary (outside is background).
    """
    padded = np.pad(mask, 1)
    eroded = ndimage.binary_erosion(padded, _FACES)[1:-1, 1:-1, 1:-1]
    return mask & ~eroded


def _joint_bbox(a: np.ndarray, b: np.ndarray) -> tuple[slice, ...]:
    idx = np.argwhere(a | b)
    lo, hi = idx.min(axis=0), idx.max(axis=0) + 1
    return tuple(slice(x, y) for x, y in zip(lo, hi))


def surface_distances(pred: np.ndarray, gt: np.ndarray, spacing=(1.0, 1.0, 1.0)) -> np.ndarray:
    """Pooled directed boundary-to-boundary distances, both directions, in mm."""
    # nearest boundary voxels lie inside the joint bounding box, so crop
    sl = _joint_bbox(pred, gt)
    bp, bg = boundary(pred)[sl], boundary(gt)[sl]
    to_gt = ndimage.distance_transform_edt(~bg, sampling=spacing)
    to_pred = ndimage.distance_transform_edt(~bp, sampling=spacing)
    return np.concatenate([to_gt[bp], to_pred[bg]])


def hd95(pred: np.ndarray, gt: np.ndarray, spacing=(1.0, 1.0, 1.0), penalty: float = 374.0) -> float:
    """95th percentile (linear interpolation) of pooled surface distances.

    Both empty gives 0; exactly one empty gives ``penalty``.
    """
    pred, gt = _check_pair(pred, gt)
    has_p, has_g = pred.any(), gt.any()
    if not has_p and not has_g:
        return 0.0
    if has_p != has_g:
        return float(penalty)
    return float(np.percentile(surface_distances(pred, gt, spacing), 95))


def pair_metrics(mr: MatchResult, spacing=(1.0, 1.0, 1.0), penalty: float = 374.0) -> list[dict]:
    out = []
    for i in range(mr.tp_count):
        g, p = mr.pair_masks(i)
        out.append({"dsc": legacy_dsc(p, g), "hd95": hd95(p, g, spacing, penalty)})
    return out


def lesion_wise_metric(
    mr: MatchResult,
    metric: Literal["dsc", "hd95"],
    cfg: MatchConfig = MatchConfig(),
    spacing=(1.0, 1.0, 1.0),
    per_pair: list[dict] | None = None,
) -> float:
    """Sum of per-lesion metric over ``TP + FN + FP`` lesion slots.

    Missed and spurious lesions add 0 to the DSC sum and ``cfg.hd95_penalty``
    to the HD95 sum. With no lesions on either side DSC is 1 and HD95 is 0.
    """
    if metric not in ("dsc", "hd95"):
        raise ValueError(f"unknown metric {metric!r}")
    denom = mr.tp_count + mr.fn_count + mr.fp_count
    if denom == 0:
        return 1.0 if metric == "dsc" else 0.0
    if per_pair is None:
        per_pair = pair_metrics(mr, spacing, cfg.hd95_penalty)
    total = sum(p[metric] for p in per_pair)
    if metric == "hd95":
        total += cfg.hd95_penalty * (mr.fn_count + mr.fp_count)
    return total / denom
