"""Residual 3D U-Net with deep supervision heads."""
from __future__ import annotations

from dataclasses import dataclass, asdict

import numpy as np
import torch
from torch import nn

from metseg.models.detector import as_tensor, check_batch


@dataclass(frozen=True)
class SegmentorConfig:
    """Encoder-decoder layout.

    Every stage holds ``blocks_per_stage`` conv layers, each wrapped in an
    additive skip when ``residual`` is set (1x1 projection where the
    channel count or resolution changes). ``residual=False`` with no deep
    supervision gives the plain reference U-Net.
    """

    in_channels: int = 3
    out_channels: int = 3
    n_stages: int = 5
    base_features: int = 32
    max_features: int = 320
    blocks_per_stage: int = 2
    deep_supervision_levels: int = 3
    patch_size: int = 64
    residual: bool = True
    negative_slope: float = 0.01

    def __post_init__(self):
        if self.in_channels < 1 or self.out_channels < 1:
            raise ValueError("channel counts must be >= 1")
        if self.n_stages < 1 or self.blocks_per_stage < 1:
            raise ValueError("n_stages and blocks_per_stage must be >= 1")
        # heads sit on decoder stages, the coarsest of which is n_stages - 2
        if not 0 <= self.deep_supervision_levels <= max(self.n_stages - 2, 0):
            raise ValueError("deep_supervision_levels must lie in [0, n_stages - 2]")
        if self.patch_size % 2 ** (self.n_stages - 1):
            raise ValueError(f"patch_size {self.patch_size} not divisible by 2^{self.n_stages - 1}")

    @property
    def features(self) -> list[int]:
        return [min(self.base_features * 2**s, self.max_features) for s in range(self.n_stages)]

    @property
    def bottleneck_size(self) -> int:
        return self.patch_size // 2 ** (self.n_stages - 1)

    def to_dict(self) -> dict:
        return asdict(self)


def reference_unet_config(in_channels: int = 4, patch_size: int = 128) -> SegmentorConfig:
    """Plain (non-residual) U-Net used as the ungated comparison baseline."""
    return SegmentorConfig(
        in_channels=in_channels,
        patch_size=patch_size,
        residual=False,
        deep_supervision_levels=0,
    )


class ConvLayer(nn.Module):
    """conv3 -> instance norm (+ skip) -> leaky ReLU."""

    def __init__(self, cin: int, cout: int, stride: int, residual: bool, slope: float):
        super().__init__()
        self.conv = nn.Conv3d(cin, cout, 3, stride=stride, padding=1)
        self.norm = nn.InstanceNorm3d(cout, affine=True)
        self.act = nn.LeakyReLU(slope, inplace=True)
        self.skip = None
        if residual:
            if cin != cout or stride != 1:
                self.skip = nn.Conv3d(cin, cout, 1, stride=stride, bias=False)
            else:
                self.skip = nn.Identity()

    def forward(self, x):
        h = self.norm(self.conv(x))
        if self.skip is not None:
            h = h + self.skip(x)
        return self.act(h)


def _stage(cin: int, cout: int, n: int, stride: int, cfg: SegmentorConfig) -> nn.Sequential:
    layers = [ConvLayer(cin, cout, stride, cfg.residual, cfg.negative_slope)]
    layers += [ConvLayer(cout, cout, 1, cfg.residual, cfg.negative_slope) for _ in range(n - 1)]
    return nn.Sequential(*layers)


class ResidualUNet3D(nn.Module):
    def __init__(self, config: SegmentorConfig):
        super().__init__()
        self.config = config
        c, f = config, config.features
        self.encoder = nn.ModuleList(
            _stage(c.in_channels if s == 0 else f[s - 1], f[s], c.blocks_per_stage, 1 if s == 0 else 2, c)
            for s in range(c.n_stages)
        )
        self.up = nn.ModuleList(
            nn.ConvTranspose3d(f[s + 1], f[s], 2, stride=2, bias=False) for s in range(c.n_stages - 1)
        )
        self.decoder = nn.ModuleList(
            _stage(2 * f[s], f[s], c.blocks_per_stage, 1, c) for s in range(c.n_stages - 1)
        )
        n_heads = 1 + c.deep_supervision_levels
        self.heads = nn.ModuleList(nn.Conv3d(f[lvl], c.out_channels, 1) for lvl in range(n_heads))

    def forward(self, x: torch.Tensor):
        """Primary logits in eval mode; ``[primary, aux_1, ...]`` in train mode.

        Auxiliary head ``l`` runs at 1 / 2**l of the input resolution.
        """
        skips = []
        for stage in self.encoder:
            x = stage(x)
            skips.append(x)
        x = skips.pop()
        n_heads = len(self.heads)
        outputs = {}
        for s in reversed(range(self.config.n_stages - 1)):
            x = self.up[s](x)
            x = self.decoder[s](torch.cat([x, skips[s]], dim=1))
            if s < n_heads and (self.training or s == 0):
                outputs[s] = self.heads[s](x)
        if self.config.n_stages == 1:
            outputs[0] = self.heads[0](x)
        if not self.training:
            return outputs[0]
        return [outputs[lvl] for lvl in range(n_heads)]


def segmentor_forward(model: ResidualUNet3D, batch, mode: str = "eval"):
    """Region logits ``[B, 3, s, s, s]``; a list including auxiliary heads in train mode."""
    cfg = model.config
    check_batch(batch, cfg.in_channels, cfg.patch_size)
    model.train(mode == "train")
    with torch.no_grad():
        out = model(as_tensor(batch))
    if isinstance(out, list):
        return [o.numpy() for o in out]
    return out.numpy()


def region_probabilities(model: ResidualUNet3D, batch) -> np.ndarray:
    """Sigmoid region probabilities of the primary head, eval mode."""
    model.eval()
    with torch.no_grad():
        return torch.sigmoid(model(as_tensor(batch))).numpy()
