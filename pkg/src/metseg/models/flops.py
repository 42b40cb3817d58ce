"""Analytic compute-cost estimates.

Only convolutions, transposed convolutions and linear layers are counted;
norms, activations, pooling and biases are neglected. By default one
multiply-accumulate is reported as one FLOP, the convention of common
profilers and of the published detector / 3D U-Net figures; pass
``flops_per_mac=2`` for the strict count.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import torch
from torch import nn

from metseg.models.detector import DetectorConfig, dense_plan
from metseg.models.segmentor import SegmentorConfig


@dataclass(frozen=True)
class LayerCost:
    name: str
    macs: int


def _cube(s: int) -> int:
    return s * s * s


def detector_layers(cfg: DetectorConfig, spatial: int) -> list[LayerCost]:
    out = []
    k = cfg.stem_kernel
    s = (spatial + 2 * (k // 2) - k) // cfg.stem_stride + 1
    out.append(LayerCost("stem", _cube(s) * cfg.in_channels * cfg.init_features * k**3))
    if cfg.stem_pool:
        s = (s - 1) // 2 + 1
    bottleneck = cfg.bn_size * cfg.growth_rate
    for i, (fin, fout) in enumerate(dense_plan(cfg)):
        for j in range(cfg.block_layers[i]):
            cin = fin + j * cfg.growth_rate
            macs = _cube(s) * (cin * bottleneck + bottleneck * cfg.growth_rate * 27)
            out.append(LayerCost(f"block{i}.layer{j}", macs))
        if i < len(cfg.block_layers) - 1:
            out.append(LayerCost(f"transition{i}", _cube(s) * fout * int(fout * cfg.compression)))
            s //= 2
    feats = dense_plan(cfg)[-1][1] if cfg.block_layers else cfg.init_features
    out.append(LayerCost("classifier", feats))
    return out


def segmentor_layers(cfg: SegmentorConfig, spatial: int) -> list[LayerCost]:
    f = cfg.features
    vox = [_cube(spatial // 2**s) for s in range(cfg.n_stages)]
    out = []

    def stage(prefix, cin, cout, v, stride):
        layers = []
        for j in range(cfg.blocks_per_stage):
            fin = cin if j == 0 else cout
            macs = v * fin * cout * 27
            if cfg.residual and j == 0 and (fin != cout or stride != 1):
                macs += v * fin * cout  # 1x1 projection skip
            layers.append(LayerCost(f"{prefix}.{j}", macs))
        return layers

    for s in range(cfg.n_stages):
        cin = cfg.in_channels if s == 0 else f[s - 1]
        out += stage(f"enc{s}", cin, f[s], vox[s], 1 if s == 0 else 2)
    for s in reversed(range(cfg.n_stages - 1)):
        out.append(LayerCost(f"up{s}", vox[s + 1] * f[s + 1] * f[s] * 8))
        out += stage(f"dec{s}", 2 * f[s], f[s], vox[s], 1)
    # auxiliary heads only run during training
    out.append(LayerCost("head0", vox[0] * f[0] * cfg.out_channels))
    return out


def layer_table(config, input_shape: Sequence[int]) -> list[LayerCost]:
    """Per-layer MACs for ``input_shape = (C, S, S, S)``."""
    spatial = int(input_shape[-1])
    if len(set(int(s) for s in input_shape[-3:])) != 1:
        raise ValueError("only cubic inputs are supported")
    if isinstance(config, DetectorConfig):
        return detector_layers(config, spatial)
    if isinstance(config, SegmentorConfig):
        return segmentor_layers(config, spatial)
    raise TypeError(f"unsupported config {type(config).__name__}")


def estimate_flops(config, input_shape: Sequence[int] = (3, 64, 64, 64), flops_per_mac: float = 1.0) -> float:
    """GFLOPs of one forward pass.

    ``config`` may also be a precomputed list of :class:`LayerCost`; an
    empty list costs 0.
    """
    layers = config if isinstance(config, (list, tuple)) else layer_table(config, input_shape)
    return flops_per_mac * sum(layer.macs for layer in layers) / 1e9


def measure_macs(model: nn.Module, input_shape: Sequence[int]) -> int:
    """Count MACs by tracing a forward pass on the ``meta`` device.

    Independent of :func:`layer_table`; used to cross-check it.
    """
    total = 0

    def conv_hook(mod, inp, out):
        nonlocal total
        k = math.prod(mod.kernel_size)
        if isinstance(mod, nn.ConvTranspose3d):
            total += inp[0][0].numel() * mod.out_channels * k // mod.groups
        else:
            total += out[0].numel() * mod.in_channels * k // mod.groups

    def linear_hook(mod, inp, out):
        nonlocal total
        total += mod.in_features * mod.out_features

    handles = []
    meta = model.to("meta")
    for m in meta.modules():
        if isinstance(m, (nn.Conv3d, nn.ConvTranspose3d)):
            handles.append(m.register_forward_hook(conv_hook))
        elif isinstance(m, nn.Linear):
            handles.append(m.register_forward_hook(linear_hook))
    try:
        meta.eval()
        with torch.no_grad():
            meta(torch.empty((1, *input_shape), device="meta"))
    finally:
        for h in handles:
            h.remove()
    return total
