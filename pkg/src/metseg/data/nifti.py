"""NIfTI-1 reading and writing (plain or gzip-compressed)."""
from __future__ import annotations

from pathlib import Path

import nibabel as nib
import numpy as np

from metseg.data.volumes import LabelVolume, MultiModalVolume
from metseg.exceptions import DataError

NIFTI_SUFFIXES = (".nii.gz", ".nii")


def read_nifti(path: str | Path) -> tuple[np.ndarray, tuple[float, float, float], np.ndarray]:
    """Return ``(array, spacing, affine)`` with the on-disk dtype preserved."""
    path = Path(path)
    try:
        img = nib.load(str(path))
    except FileNotFoundError:
        raise
    except Exception as exc:  # nibabel raises a zoo of types for bad files
        raise DataError(f"cannot read NIfTI file {path}: {exc}") from exc
    data = np.asanyarray(img.dataobj)
    if data.ndim == 4 and data.shape[-1] == 1:
        data = data[..., 0]
    spacing = tuple(float(z) for z in img.header.get_zooms()[:3])
    return np.asarray(data), spacing, np.asarray(img.affine, dtype=np.float64)


def write_nifti(
    path: str | Path,
    data: np.ndarray,
    spacing=(1.0, 1.0, 1.0),
    affine: np.ndarray | None = None,
) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    data = np.asarray(data)
    if affine is None:
        affine = np.diag([*spacing, 1.0])
    img = nib.Nifti1Image(data, affine)
    img.header.set_data_dtype(data.dtype)
    img.header.set_zooms(tuple(float(s) for s in spacing)[: data.ndim])
    nib.save(img, str(path))
    return path


def find_nifti(directory: Path, stem: str) -> Path | None:
    for suffix in NIFTI_SUFFIXES:
        candidate = directory / f"{stem}{suffix}"
        if candidate.is_file():
            return candidate
    return None


def strip_nifti_suffix(name: str) -> str:
    for suffix in NIFTI_SUFFIXES:
        if name.endswith(suffix):
            return name[: -len(suffix)]
    return name


def load_label_file(path: str | Path, case_id: str | None = None) -> LabelVolume:
    data, spacing, affine = read_nifti(path)
    return LabelVolume(data, spacing, affine, case_id)


def save_label_volume(path: str | Path, labels: LabelVolume) -> Path:
    return write_nifti(path, labels.data.astype(np.uint8), labels.spacing, labels.affine)


def save_volume_channels(directory: str | Path, vol: MultiModalVolume, suffixes: dict) -> list[Path]:
    """Write one file per channel as ``<id>-<suffix>.nii.gz``."""
    directory = Path(directory)
    case_id = vol.case_id or directory.name
    paths = []
    for c, mod in enumerate(vol.modalities):
        p = directory / f"{case_id}-{suffixes[mod]}.nii.gz"
        paths.append(write_nifti(p, vol.data[c], vol.spacing, vol.affine))
    return paths
