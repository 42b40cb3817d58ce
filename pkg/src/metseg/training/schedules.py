"""Per-epoch learning-rate schedules and optimizer settings."""
from __future__ import annotations

import math
from dataclasses import dataclass, asdict
from typing import Literal

import torch


@dataclass(frozen=True)
class PolySchedule:
    """Polynomial schedule.

    ``direction="decay"`` gives ``base * (1 - epoch / max_epoch) ** exponent``;
    ``"literal"`` gives ``base * (epoch / max_epoch) ** exponent``, which
    starts at 0.
    """

    base_lr: float = 0.01
    max_epoch: int = 1000
    exponent: float = 0.9
    direction: Literal["decay", "literal"] = "decay"
    kind: str = "poly"

    def __post_init__(self):
        if self.base_lr <= 0 or self.max_epoch <= 0:
            raise ValueError("base_lr and max_epoch must be positive")
        if self.direction not in ("decay", "literal"):
            raise ValueError(f"unknown direction {self.direction!r}")

    def __call__(self, epoch: int) -> float:
        return poly_lr(epoch, self)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class WarmupCosineSchedule:
    """Linear warm-up from ``start_lr`` to ``peak_lr``, then cosine to ``min_lr``."""

    start_lr: float = 1e-6
    peak_lr: float = 4e-4
    warmup_epochs: int = 10
    max_epoch: int = 400
    min_lr: float = 0.0
    kind: str = "warmup_cosine"

    def __post_init__(self):
        if not 0 <= self.warmup_epochs < self.max_epoch:
            raise ValueError("need 0 <= warmup_epochs < max_epoch")
        if self.start_lr <= 0 or self.peak_lr <= 0 or self.min_lr < 0:
            raise ValueError("learning rates must be positive (min_lr >= 0)")

    def __call__(self, epoch: int) -> float:
        return warmup_cosine_lr(epoch, self)

    def to_dict(self) -> dict:
        return asdict(self)


def _check_epoch(epoch: float, max_epoch: int) -> None:
    if not 0 <= epoch <= max_epoch:
        raise ValueError(f"epoch {epoch} outside [0, {max_epoch}]")


def poly_lr(epoch: float, cfg: PolySchedule = PolySchedule()) -> float:
    _check_epoch(epoch, cfg.max_epoch)
    # (max - epoch) / max avoids cancellation near the end of the decay
    rest = cfg.max_epoch - epoch if cfg.direction == "decay" else epoch
    frac = rest / cfg.max_epoch
    return cfg.base_lr * frac**cfg.exponent


def warmup_cosine_lr(epoch: float, cfg: WarmupCosineSchedule = WarmupCosineSchedule()) -> float:
    _check_epoch(epoch, cfg.max_epoch)
    if epoch < cfg.warmup_epochs:
        return cfg.start_lr + (cfg.peak_lr - cfg.start_lr) * epoch / cfg.warmup_epochs
    progress = (epoch - cfg.warmup_epochs) / (cfg.max_epoch - cfg.warmup_epochs)
    # 0.5 * (1 + cos(pi p)) written as cos^2(pi p / 2), which stays accurate near p = 1
    return cfg.min_lr + (cfg.peak_lr - cfg.min_lr) * math.cos(0.5 * math.pi * progress) ** 2


@dataclass(frozen=True)
class SGDConfig:
    base_lr: float = 0.01
    momentum: float = 0.99
    weight_decay: float = 3e-5
    nesterov: bool = True

    def __post_init__(self):
        if min(self.base_lr, self.momentum, self.weight_decay) <= 0:
            raise ValueError("SGD settings must be positive")

    def build(self, params) -> torch.optim.Optimizer:
        return torch.optim.SGD(
            params, lr=self.base_lr, momentum=self.momentum,
            weight_decay=self.weight_decay, nesterov=self.nesterov,
        )


@dataclass(frozen=True)
class AdamConfig:
    lr: float = 4e-4
    beta1: float = 0.9
    beta2: float = 0.999

    def __post_init__(self):
        if not 0 < self.beta1 < self.beta2 < 1:
            raise ValueError("need 0 < beta1 < beta2 < 1")

    def build(self, params) -> torch.optim.Optimizer:
        return torch.optim.Adam(params, lr=self.lr, betas=(self.beta1, self.beta2))


def set_lr(optimizer: torch.optim.Optimizer, lr: float) -> None:
    for group in optimizer.param_groups:
        group["lr"] = lr
