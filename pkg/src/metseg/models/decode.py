"""Hierarchy-respecting decoding of region probabilities into labels."""
from __future__ import annotations

from typing import Sequence

import numpy as np

from metseg.data.volumes import LabelVolume


def regions_to_labels(
    probs: np.ndarray,
    thresholds: Sequence[float] = (0.5, 0.5, 0.5),
    spacing=(1.0, 1.0, 1.0),
    affine=None,
    case_id: str | None = None,
) -> LabelVolume:
    """Decode ``[3, D, H, W]`` (WT, TC, ET) probabilities.

    ET needs TC and WT, TC needs WT; a voxel where only WT fires is SNFH.
    """
    probs = np.asarray(probs)
    if probs.ndim != 4 or probs.shape[0] != 3:
        raise ValueError(f"expected [3, D, H, W] region probabilities, got {probs.shape}")
    t_wt, t_tc, t_et = thresholds
    wt = probs[0] >= t_wt
    tc = wt & (probs[1] >= t_tc)
    et = tc & (probs[2] >= t_et)
    labels = np.zeros(probs.shape[1:], dtype=np.uint8)
    labels[wt] = 2
    labels[tc] = 1
    labels[et] = 3
    return LabelVolume(labels, spacing, affine, case_id)
