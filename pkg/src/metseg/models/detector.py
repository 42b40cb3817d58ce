"""3D DenseNet patch classifier (DenseNet-121 layout by default)."""
from __future__ import annotations

from dataclasses import dataclass, asdict

import numpy as np
import torch
from torch import nn

from metseg.exceptions import ShapeError


@dataclass(frozen=True)
class DetectorConfig:
    in_channels: int = 3
    growth_rate: int = 32
    block_layers: tuple[int, ...] = (6, 12, 24, 16)
    compression: float = 0.5
    init_features: int = 64
    bn_size: int = 4
    patch_size: int = 64
    stem_kernel: int = 7
    stem_stride: int = 2
    stem_pool: bool = True

    def __post_init__(self):
        if self.in_channels < 1:
            raise ValueError("in_channels must be >= 1")
        if not 0 < self.compression <= 1:
            raise ValueError("compression must lie in (0, 1]")
        object.__setattr__(self, "block_layers", tuple(int(n) for n in self.block_layers))

    def to_dict(self) -> dict:
        d = asdict(self)
        d["block_layers"] = list(self.block_layers)
        return d


class _DenseLayer(nn.Module):
    def __init__(self, cin: int, growth: int, bn_size: int):
        super().__init__()
        self.body = nn.Sequential(
            nn.BatchNorm3d(cin),
            nn.ReLU(inplace=True),
            nn.Conv3d(cin, bn_size * growth, 1, bias=False),
            nn.BatchNorm3d(bn_size * growth),
            nn.ReLU(inplace=True),
            nn.Conv3d(bn_size * growth, growth, 3, padding=1, bias=False),
        )

    def forward(self, x):
        return torch.cat([x, self.body(x)], dim=1)


class _Transition(nn.Sequential):
    def __init__(self, cin: int, cout: int):
        super().__init__(
            nn.BatchNorm3d(cin),
            nn.ReLU(inplace=True),
            nn.Conv3d(cin, cout, 1, bias=False),
            nn.AvgPool3d(2, stride=2),
        )


def dense_plan(cfg: DetectorConfig) -> list[tuple[int, int]]:
    """``(input features, output features)`` of every dense block."""
    plan, feats = [], cfg.init_features
    for i, n in enumerate(cfg.block_layers):
        out = feats + n * cfg.growth_rate
        plan.append((feats, out))
        feats = out if i == len(cfg.block_layers) - 1 else int(out * cfg.compression)
    return plan


class DenseNet3D(nn.Module):
    """Dense blocks with bottleneck layers, global average pooling and one logit."""

    def __init__(self, config: DetectorConfig):
        super().__init__()
        self.config = config
        c = config
        layers: list[nn.Module] = [
            nn.Conv3d(
                c.in_channels, c.init_features, c.stem_kernel,
                stride=c.stem_stride, padding=c.stem_kernel // 2, bias=False,
            ),
            nn.BatchNorm3d(c.init_features),
            nn.ReLU(inplace=True),
        ]
        if c.stem_pool:
            layers.append(nn.MaxPool3d(3, stride=2, padding=1))
        feats = c.init_features
        for i, (fin, fout) in enumerate(dense_plan(c)):
            for j in range(c.block_layers[i]):
                layers.append(_DenseLayer(fin + j * c.growth_rate, c.growth_rate, c.bn_size))
            feats = fout
            if i < len(c.block_layers) - 1:
                nxt = int(fout * c.compression)
                layers.append(_Transition(fout, nxt))
                feats = nxt
        layers += [nn.BatchNorm3d(feats), nn.ReLU(inplace=True)]
        self.features = nn.Sequential(*layers)
        self.classifier = nn.Linear(feats, 1)
        self.n_features = feats
        for m in self.modules():
            if isinstance(m, nn.Conv3d):
                nn.init.kaiming_normal_(m.weight)
            elif isinstance(m, nn.Linear):
                nn.init.zeros_(m.bias)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        """Logits ``[B]``."""
        h = self.features(x)
        h = torch.flatten(nn.functional.adaptive_avg_pool3d(h, 1), 1)
        return self.classifier(h).squeeze(1)


def check_batch(batch, in_channels: int, patch_size: int) -> None:
    shape = tuple(batch.shape)
    expected = (in_channels, patch_size, patch_size, patch_size)
    if len(shape) != 5 or shape[1:] != expected:
        raise ShapeError(f"expected batch [B, {', '.join(map(str, expected))}], got {list(shape)}")


def as_tensor(batch) -> torch.Tensor:
    if isinstance(batch, torch.Tensor):
        return batch.float()
    return torch.from_numpy(np.ascontiguousarray(batch, dtype=np.float32))


def detector_forward(model: DenseNet3D, batch, mode: str = "eval") -> np.ndarray:
    """Patch probabilities ``[B]`` in (0, 1).

    ``mode="train"`` uses batch statistics for normalization; nothing is
    updated by the call itself apart from running-stat buffers.
    """
    cfg = model.config
    check_batch(batch, cfg.in_channels, cfg.patch_size)
    model.train(mode == "train")
    with torch.no_grad():
        return torch.sigmoid(model(as_tensor(batch))).numpy()
