"""Volume containers, dataset discovery, synthetic data and statistics."""
from metseg.data.dataset import (
    DEFAULT_LABEL_SUFFIX,
    DEFAULT_SUFFIXES,
    DEFAULT_SPLIT,
    CaseEntry,
    DatasetIndex,
    discover_dataset,
    load_case,
    load_image,
    split_sizes,
)
from metseg.data.nifti import load_label_file, read_nifti, save_label_volume, write_nifti
from metseg.data.synthetic import SyntheticSpec, generate_synthetic, write_synthetic_dataset
from metseg.data.volumes import (
    ALL_MODALITIES,
    REGION_NAMES,
    LabelVolume,
    ModalityId,
    MultiModalVolume,
    RegionMasks,
    compose_regions,
    normalize,
    parse_modalities,
    subset_name,
)

__all__ = [
    "ALL_MODALITIES",
    "CaseEntry",
    "DEFAULT_LABEL_SUFFIX",
    "DEFAULT_SUFFIXES",
    "DatasetIndex",
    "LabelVolume",
    "ModalityId",
    "MultiModalVolume",
    "DEFAULT_SPLIT",
    "REGION_NAMES",
    "RegionMasks",
    "SyntheticSpec",
    "compose_regions",
    "discover_dataset",
    "generate_synthetic",
    "load_case",
    "load_image",
    "load_label_file",
    "normalize",
    "parse_modalities",
    "read_nifti",
    "save_label_volume",
    "split_sizes",
    "subset_name",
    "write_nifti",
    "write_synthetic_dataset",
]
