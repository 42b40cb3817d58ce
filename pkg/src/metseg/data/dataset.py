"""Dataset discovery, deterministic splitting and case loading."""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from metseg.data.nifti import find_nifti, read_nifti, load_label_file
from metseg.data.volumes import (
    LabelVolume,
    ModalityId,
    MultiModalVolume,
    parse_modalities,
)
from metseg.exceptions import DataError, ShapeError

# BraTS-Mets 2023 file naming: <id>/<id>-t1n.nii.gz etc.
DEFAULT_SUFFIXES: dict[ModalityId, str] = {
    ModalityId.T1: "t1n",
    ModalityId.T1C: "t1c",
    ModalityId.T2: "t2w",
    ModalityId.FLAIR: "t2f",
}
DEFAULT_LABEL_SUFFIX = "seg"
SPLIT_NAMES = ("train", "val", "test")
DEFAULT_SPLIT = (0.85, 0.05, 0.10)


@dataclass(frozen=True)
class CaseEntry:
    case_id: str
    images: Mapping[ModalityId, Path]
    label: Path | None

    def to_dict(self) -> dict:
        return {
            "case_id": self.case_id,
            "images": {m.value: str(p) for m, p in self.images.items()},
            "label": None if self.label is None else str(self.label),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "CaseEntry":
        return cls(
            d["case_id"],
            {ModalityId.parse(k): Path(v) for k, v in d["images"].items()},
            None if d.get("label") is None else Path(d["label"]),
        )


@dataclass
class DatasetIndex:
    root: Path
    modalities: tuple[ModalityId, ...]
    cases: list[CaseEntry]
    splits: dict[str, list[str]] = field(default_factory=dict)

    def __post_init__(self):
        ids = [c.case_id for c in self.cases]
        seen: set[str] = set()
        for name, members in self.splits.items():
            overlap = seen.intersection(members)
            if overlap:
                raise DataError(f"case(s) {sorted(overlap)} assigned to more than one split")
            seen.update(members)
        if self.splits and seen != set(ids):
            missing = sorted(set(ids) - seen)
            unknown = sorted(seen - set(ids))
            raise DataError(f"splits must cover all cases; unassigned={missing} unknown={unknown}")

    def entry(self, case_id: str) -> CaseEntry:
        for c in self.cases:
            if c.case_id == case_id:
                return c
        raise KeyError(case_id)

    def split(self, name: str) -> list[CaseEntry]:
        return [self.entry(cid) for cid in self.splits.get(name, [])]

    def to_dict(self) -> dict:
        return {
            "root": str(self.root),
            "modalities": [m.value for m in self.modalities],
            "cases": [c.to_dict() for c in self.cases],
            "splits": {k: list(v) for k, v in self.splits.items()},
        }

    @classmethod
    def from_dict(cls, d: dict) -> "DatasetIndex":
        return cls(
            Path(d["root"]),
            parse_modalities(d["modalities"]),
            [CaseEntry.from_dict(c) for c in d["cases"]],
            {k: list(v) for k, v in d["splits"].items()},
        )

    def save(self, path: str | Path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(self.to_dict(), indent=2))
        return path

    @classmethod
    def load(cls, path: str | Path) -> "DatasetIndex":
        return cls.from_dict(json.loads(Path(path).read_text()))


def split_sizes(n: int, fractions: Sequence[float]) -> list[int]:
    """Floor every share except the last, which takes the remainder.

    238 cases at (0.85, 0.05, 0.10) give 202/11/25.
    """
    fractions = [float(f) for f in fractions]
    if any(f < 0 for f in fractions) or not math.isclose(sum(fractions), 1.0, abs_tol=1e-6):
        raise DataError(f"split fractions must be non-negative and sum to 1, got {fractions}")
    # tolerance keeps 10 * 0.7 from flooring to 6
    sizes = [int(math.floor(n * f + 1e-9)) for f in fractions[:-1]]
    sizes.append(n - sum(sizes))
    return sizes


def _build_splits(ids: list[str], split_spec) -> dict[str, list[str]]:
    if isinstance(split_spec, Mapping):
        return {name: list(split_spec.get(name, [])) for name in SPLIT_NAMES}
    sizes = split_sizes(len(ids), split_spec)
    out, start = {}, 0
    for name, size in zip(SPLIT_NAMES, sizes):
        out[name] = ids[start : start + size]
        start += size
    return out


def discover_dataset(
    root: str | Path,
    modalities: Sequence[ModalityId | str],
    split_spec: Sequence[float] | Mapping[str, Sequence[str]] = DEFAULT_SPLIT,
    suffixes: Mapping[ModalityId, str] | None = None,
    label_suffix: str | None = DEFAULT_LABEL_SUFFIX,
) -> DatasetIndex:
    """Index ``root/<id>/<id>-<suffix>.nii[.gz]`` patient directories.

    Cases are sorted by id. Fractional ``split_spec`` assigns contiguous
    blocks in that order; a mapping of explicit id lists is used verbatim.
    Pass ``label_suffix=None`` for unlabelled (inference-only) data.
    """
    root = Path(root)
    if not root.is_dir():
        raise DataError(f"dataset root {root} does not exist")
    mods = parse_modalities(modalities)
    suffixes = {**DEFAULT_SUFFIXES, **{ModalityId.parse(k): v for k, v in (suffixes or {}).items()}}
    patient_dirs = sorted(p for p in root.iterdir() if p.is_dir())
    if not patient_dirs:
        raise DataError(f"no cases found under {root}")

    cases, problems = [], []
    for pdir in patient_dirs:
        cid = pdir.name
        images, absent = {}, []
        for mod in mods:
            path = find_nifti(pdir, f"{cid}-{suffixes[mod]}")
            if path is None:
                absent.append(f"{mod.value} ({suffixes[mod]})")
            else:
                images[mod] = path
        label = None
        if label_suffix is not None:
            label = find_nifti(pdir, f"{cid}-{label_suffix}")
            if label is None:
                absent.append(f"label ({label_suffix})")
        if absent:
            problems.append(f"{cid}: missing {', '.join(absent)}")
        else:
            cases.append(CaseEntry(cid, images, label))
    if problems:
        raise DataError("incomplete cases:\n  " + "\n  ".join(problems))

    ids = [c.case_id for c in cases]
    return DatasetIndex(root, mods, cases, _build_splits(ids, split_spec))


def load_image(entry: CaseEntry, modalities: Sequence[ModalityId | str]) -> MultiModalVolume:
    mods = parse_modalities(modalities)
    channels, spacing, affine, shape0 = [], None, None, None
    for mod in mods:
        if mod not in entry.images:
            raise DataError(f"{entry.case_id}: no file for modality {mod.value}")
        data, sp, aff = read_nifti(entry.images[mod])
        if shape0 is None:
            shape0, spacing, affine = data.shape, sp, aff
        elif data.shape != shape0:
            raise ShapeError(
                f"{entry.case_id}: shape mismatch {mod.value} {data.shape} vs "
                f"{mods[0].value} {shape0}"
            )
        channels.append(data.astype(np.float32))
    return MultiModalVolume(np.stack(channels), spacing, mods, affine, entry.case_id)


def load_case(
    entry: CaseEntry, modalities: Sequence[ModalityId | str]
) -> tuple[MultiModalVolume, LabelVolume]:
    """Load the requested channels (in order) plus the label volume."""
    vol = load_image(entry, modalities)
    if entry.label is None:
        raise DataError(f"{entry.case_id}: case has no label file")
    labels = load_label_file(entry.label, entry.case_id)
    if labels.shape != vol.spatial_shape:
        raise ShapeError(
            f"{entry.case_id}: shape mismatch image {vol.spatial_shape} vs label {labels.shape}"
        )
    return vol, labels
