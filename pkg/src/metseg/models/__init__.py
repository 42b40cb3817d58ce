"""Detector and segmentor networks, region decoding and cost estimates."""
from metseg.models.checkpoint import Checkpoint, config_fingerprint, snapshot
from metseg.models.decode import regions_to_labels
from metseg.models.detector import DenseNet3D, DetectorConfig, detector_forward
from metseg.models.flops import LayerCost, estimate_flops, layer_table, measure_macs
from metseg.models.segmentor import (
    ResidualUNet3D,
    SegmentorConfig,
    reference_unet_config,
    region_probabilities,
    segmentor_forward,
)

__all__ = [
    "Checkpoint",
    "DenseNet3D",
    "DetectorConfig",
    "LayerCost",
    "ResidualUNet3D",
    "SegmentorConfig",
    "config_fingerprint",
    "detector_forward",
    "estimate_flops",
    "layer_table",
    "measure_macs",
    "reference_unet_config",
    "region_probabilities",
    "regions_to_labels",
    "segmentor_forward",
    "snapshot",
]
