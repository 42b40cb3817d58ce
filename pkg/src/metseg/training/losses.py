"""Dice, binary cross-entropy and the deep-supervision segmentation loss."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import torch
import torch.nn.functional as F

from metseg.exceptions import ShapeError

BCE_DELTA = 1e-7


def _check(pred: torch.Tensor, target: torch.Tensor) -> None:
    if pred.shape != target.shape:
        raise ShapeError(f"shape mismatch pred {tuple(pred.shape)} vs target {tuple(target.shape)}")


def dice_loss(pred: torch.Tensor, target: torch.Tensor, eps: float = 1e-5, channel_axis: int = 0) -> torch.Tensor:
    """``1 - mean_k (2 sum(p t) + eps) / (sum p + sum t + eps)``.

    Sums run over every axis except ``channel_axis`` (batch dice when a
    batch axis is present). An empty channel on both sides costs ~0.
    """
    _check(pred, target)
    target = target.to(pred.dtype)
    dims = [d for d in range(pred.ndim) if d != channel_axis % pred.ndim]
    inter = (pred * target).sum(dim=dims)
    denom = pred.sum(dim=dims) + target.sum(dim=dims)
    return 1.0 - ((2.0 * inter + eps) / (denom + eps)).mean()


def bce_loss(pred: torch.Tensor, target: torch.Tensor, delta: float = BCE_DELTA) -> torch.Tensor:
    """Mean binary cross-entropy on probabilities clamped to ``[delta, 1 - delta]``."""
    _check(pred, target)
    target = target.to(pred.dtype)
    p = pred.clamp(delta, 1.0 - delta)
    return -(target * torch.log(p) + (1.0 - target) * torch.log1p(-p)).mean()


def deep_supervision_weights(n_heads: int) -> tuple[float, ...]:
    """``w_l ∝ 2**-l`` over the primary head and ``n_heads - 1`` auxiliaries."""
    raw = [2.0**-lvl for lvl in range(n_heads)]
    total = sum(raw)
    return tuple(w / total for w in raw)


@dataclass(frozen=True)
class LossConfig:
    eps: float = 1e-5
    delta: float = BCE_DELTA
    weights: tuple[float, ...] | None = None

    def __post_init__(self):
        if self.eps <= 0:
            raise ValueError("dice smoothing eps must be > 0")
        if self.weights is not None:
            if any(w < 0 for w in self.weights) or not math.isclose(sum(self.weights), 1.0, abs_tol=1e-9):
                raise ValueError(f"deep-supervision weights must be >= 0 and sum to 1, got {self.weights}")

    def head_weights(self, n_heads: int) -> tuple[float, ...]:
        if self.weights is None:
            return deep_supervision_weights(n_heads)
        if len(self.weights) != n_heads:
            raise ValueError(f"{len(self.weights)} weights for {n_heads} heads")
        return tuple(self.weights)


def downsample_target(target: torch.Tensor, size: Sequence[int]) -> torch.Tensor:
    """Max-pool a binary ``[B, K, D, H, W]`` target down to ``size``."""
    size = tuple(size)
    if tuple(target.shape[2:]) == size:
        return target
    factor = [s // t for s, t in zip(target.shape[2:], size)]
    if any(f * t != s for f, t, s in zip(factor, size, target.shape[2:])):
        raise ShapeError(f"cannot pool {tuple(target.shape[2:])} to {size}")
    return F.max_pool3d(target.float(), kernel_size=factor, stride=factor)


def total_segmentation_loss(heads: Sequence[tuple[torch.Tensor, torch.Tensor]], cfg: LossConfig = LossConfig()) -> torch.Tensor:
    """``sum_l w_l * (dice + bce)`` over ``(probabilities, target)`` head pairs.

    Tensors are ``[B, K, ...]``; targets must already match each head.
    """
    if not heads:
        raise ValueError("no heads")
    weights = cfg.head_weights(len(heads))
    total = 0.0
    for w, (pred, target) in zip(weights, heads):
        if pred.shape != target.shape:
            raise ShapeError(
                f"head/target resolution mismatch {tuple(pred.shape)} vs {tuple(target.shape)}"
            )
        if w == 0:
            continue
        total = total + w * (dice_loss(pred, target, cfg.eps, channel_axis=1) + bce_loss(pred, target, cfg.delta))
    if not isinstance(total, torch.Tensor):
        total = heads[0][0].new_zeros(())
    return total
