"""Losses, learning-rate schedules, augmentation and training loops."""
from metseg.training.augment import AugmentationConfig, augment, mirror, spatial_transform
from metseg.training.losses import (
    LossConfig,
    bce_loss,
    deep_supervision_weights,
    dice_loss,
    downsample_target,
    total_segmentation_loss,
)
from metseg.training.loops import (
    TrainState,
    detector_patch_accuracy,
    train_detector,
    train_segmentor,
)
from metseg.training.schedules import (
    AdamConfig,
    PolySchedule,
    SGDConfig,
    WarmupCosineSchedule,
    poly_lr,
    warmup_cosine_lr,
)

__all__ = [
    "AdamConfig",
    "AugmentationConfig",
    "LossConfig",
    "PolySchedule",
    "SGDConfig",
    "TrainState",
    "WarmupCosineSchedule",
    "augment",
    "bce_loss",
    "deep_supervision_weights",
    "detector_patch_accuracy",
    "dice_loss",
    "downsample_target",
    "mirror",
    "poly_lr",
    "spatial_transform",
    "total_segmentation_loss",
    "train_detector",
    "train_segmentor",
    "warmup_cosine_lr",
]
