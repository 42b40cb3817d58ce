"""Input checks shared by the estimators and the CLI."""
from __future__ import annotations

from typing import Sequence

import numpy as np

from metseg.data.volumes import LabelVolume, MultiModalVolume
from metseg.exceptions import DataError, ShapeError


def check_volumes(X, n_channels: int | None = None) -> list[MultiModalVolume]:
    """Coerce ``X`` into a non-empty list of :class:`MultiModalVolume`.

    A bare volume counts as a batch of one. Raw ``[C, D, H, W]`` arrays are
    wrapped with unit spacing and the first ``C`` canonical modalities.
    """
    if isinstance(X, (MultiModalVolume, np.ndarray)) and getattr(X, "ndim", 4) == 4:
        X = [X]
    vols = []
    for i, x in enumerate(X):
        if isinstance(x, MultiModalVolume):
            vol = x
        else:
            arr = np.asarray(x, dtype=np.float32)
            if arr.ndim != 4:
                raise ShapeError(f"sample {i}: expected [C, D, H, W], got shape {arr.shape}")
            vol = MultiModalVolume(arr)
        if n_channels is not None and vol.data.shape[0] != n_channels:
            raise ShapeError(f"sample {i}: expected {n_channels} channels, got {vol.data.shape[0]}")
        vols.append(vol)
    if not vols:
        raise DataError("no volumes given")
    return vols


def check_labels(y, volumes: Sequence[MultiModalVolume] | None = None) -> list[LabelVolume]:
    """Coerce ``y`` into label volumes matching ``volumes`` one-to-one."""
    if isinstance(y, (LabelVolume, np.ndarray)) and getattr(y, "ndim", 3) == 3:
        y = [y]
    labels = [
        lab if isinstance(lab, LabelVolume) else LabelVolume(np.asarray(lab), (1.0, 1.0, 1.0))
        for lab in y
    ]
    if volumes is not None:
        if len(labels) != len(volumes):
            raise DataError(f"{len(volumes)} volumes but {len(labels)} label volumes")
        for i, (vol, lab) in enumerate(zip(volumes, labels)):
            if tuple(lab.shape) != tuple(vol.spatial_shape):
                raise ShapeError(f"sample {i}: label shape {lab.shape} vs image {vol.spatial_shape}")
    return labels
