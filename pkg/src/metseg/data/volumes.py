"""Core volume containers, modality identities and region composition."""
from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from metseg.exceptions import DataError, ShapeError

NORMALIZE_EPS = 1e-8
VALID_LABELS = (0, 1, 2, 3)
LABEL_NAMES = {1: "NETC", 2: "SNFH", 3: "ET"}


class ModalityId(str, enum.Enum):
    T1 = "T1"
    T1C = "T1C"
    T2 = "T2"
    FLAIR = "FLAIR"

    @property
    def token(self) -> str:
        """Short name used in tables and on the command line."""
        return _TOKENS[self]

    @classmethod
    def parse(cls, name: str | "ModalityId") -> "ModalityId":
        if isinstance(name, ModalityId):
            return name
        key = str(name).strip().lower()
        for mod, aliases in _ALIASES.items():
            if key in aliases:
                return mod
        raise DataError(f"unknown modality {name!r}")


_TOKENS = {
    ModalityId.T1: "t1",
    ModalityId.T1C: "t1c",
    ModalityId.T2: "t2",
    ModalityId.FLAIR: "f",
}
_ALIASES = {
    ModalityId.T1: {"t1", "t1n", "t1w"},
    ModalityId.T1C: {"t1c", "t1ce", "t1gd"},
    ModalityId.T2: {"t2", "t2w"},
    ModalityId.FLAIR: {"f", "flair", "t2f"},
}

# Canonical order, also the enumeration order of the ablation table.
ALL_MODALITIES: tuple[ModalityId, ...] = (
    ModalityId.T1,
    ModalityId.T1C,
    ModalityId.T2,
    ModalityId.FLAIR,
)


def parse_modalities(spec: str | Iterable[str | ModalityId]) -> tuple[ModalityId, ...]:
    """Parse ``"t1c,t1,f"`` or an iterable of names into an ordered subset.

    The order is preserved; duplicates and empty subsets are rejected.
    """
    if isinstance(spec, str):
        items = [s for s in spec.replace("+", ",").split(",") if s.strip()]
    else:
        items = list(spec)
    mods = tuple(ModalityId.parse(s) for s in items)
    if not mods:
        raise DataError("modality subset must be non-empty")
    if len(set(mods)) != len(mods):
        raise DataError(f"duplicate modality in subset {[m.token for m in mods]}")
    return mods


def subset_name(mods: Sequence[ModalityId]) -> str:
    return "+".join(m.token for m in mods)


@dataclass(frozen=True)
class MultiModalVolume:
    """Channel-stacked intensities ``[C, D, H, W]`` with geometry."""

    data: np.ndarray
    spacing: tuple[float, float, float] = (1.0, 1.0, 1.0)
    modalities: tuple[ModalityId, ...] = ()
    affine: np.ndarray | None = field(default=None, compare=False, repr=False)
    case_id: str | None = None

    def __post_init__(self):
        data = np.asarray(self.data)
        if data.ndim != 4:
            raise ShapeError(f"expected [C, D, H, W] intensities, got shape {data.shape}")
        mods = tuple(ModalityId.parse(m) for m in self.modalities)
        if not mods:
            mods = ALL_MODALITIES[: data.shape[0]]
        if len(mods) != data.shape[0]:
            raise ShapeError(
                f"{data.shape[0]} channels but {len(mods)} modalities {[m.token for m in mods]}"
            )
        if len(set(mods)) != len(mods):
            raise DataError("duplicate modality in volume")
        spacing = tuple(float(s) for s in self.spacing)
        if len(spacing) != 3 or any(s <= 0 for s in spacing):
            raise DataError(f"spacing must be 3 positive values, got {self.spacing}")
        if not np.all(np.isfinite(data)):
            raise DataError("intensity volume contains NaN or Inf")
        object.__setattr__(self, "data", data)
        object.__setattr__(self, "modalities", mods)
        object.__setattr__(self, "spacing", spacing)

    @property
    def spatial_shape(self) -> tuple[int, int, int]:
        return tuple(self.data.shape[1:])

    @property
    def n_channels(self) -> int:
        return self.data.shape[0]

    def select(self, modalities: Sequence[ModalityId | str]) -> "MultiModalVolume":
        """Return a volume holding only ``modalities``, in that order."""
        mods = parse_modalities(modalities)
        missing = [m.token for m in mods if m not in self.modalities]
        if missing:
            raise DataError(f"volume has no channel for modality {missing}")
        idx = [self.modalities.index(m) for m in mods]
        return MultiModalVolume(self.data[idx], self.spacing, mods, self.affine, self.case_id)

    def with_data(self, data: np.ndarray) -> "MultiModalVolume":
        return MultiModalVolume(data, self.spacing, self.modalities, self.affine, self.case_id)


@dataclass(frozen=True)
class LabelVolume:
    """Integer annotation volume: 0 background, 1 NETC, 2 SNFH, 3 ET."""

    data: np.ndarray
    spacing: tuple[float, float, float] = (1.0, 1.0, 1.0)
    affine: np.ndarray | None = field(default=None, compare=False, repr=False)
    case_id: str | None = None

    def __post_init__(self):
        data = np.asarray(self.data)
        if data.ndim != 3:
            raise ShapeError(f"expected [D, H, W] labels, got shape {data.shape}")
        if data.dtype.kind == "f":
            if not np.all(np.isfinite(data)) or np.any(data != np.round(data)):
                bad = data[~np.isfinite(data) | (data != np.round(data))].flat[0]
                raise DataError(f"invalid label {bad}")
        values = np.unique(data)
        bad = [v for v in values.tolist() if v not in VALID_LABELS]
        if bad:
            raise DataError(f"invalid label {bad[0]:g}")
        object.__setattr__(self, "data", data.astype(np.uint8, copy=False))
        object.__setattr__(self, "spacing", tuple(float(s) for s in self.spacing))

    @property
    def shape(self) -> tuple[int, int, int]:
        return tuple(self.data.shape)


@dataclass(frozen=True)
class RegionMasks:
    """Nested evaluation regions; ``et ⊆ tc ⊆ wt`` by construction."""

    wt: np.ndarray
    tc: np.ndarray
    et: np.ndarray

    def stack(self, dtype=np.float32) -> np.ndarray:
        """Regions as a ``[3, D, H, W]`` array in (WT, TC, ET) order."""
        return np.stack([self.wt, self.tc, self.et]).astype(dtype)

    def __getitem__(self, name: str) -> np.ndarray:
        return getattr(self, name.lower())


REGION_NAMES = ("WT", "TC", "ET")


def compose_regions(labels: LabelVolume | np.ndarray) -> RegionMasks:
    lab = labels.data if isinstance(labels, LabelVolume) else np.asarray(labels)
    return RegionMasks(wt=lab > 0, tc=(lab == 1) | (lab == 3), et=lab == 3)


def normalize(vol: MultiModalVolume) -> MultiModalVolume:
    """Per-channel z-score over strictly nonzero voxels.

    Zero voxels stay exactly zero; a channel without nonzero voxels is
    returned unchanged. Population std, floored at ``NORMALIZE_EPS``.
    """
    out = np.array(vol.data, dtype=np.float32, copy=True)
    for c in range(out.shape[0]):
        chan = out[c]
        support = chan != 0
        if not support.any():
            continue
        values = chan[support].astype(np.float64)
        mean = values.mean()
        std = max(values.std(), NORMALIZE_EPS)
        chan[support] = ((values - mean) / std).astype(np.float32)
    return vol.with_data(out)
