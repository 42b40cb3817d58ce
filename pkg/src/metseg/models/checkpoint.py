"""Checkpoint snapshots: weights, optimizer, schedule position and RNG state."""
from __future__ import annotations

import copy
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import torch

from metseg.models.detector import DenseNet3D, DetectorConfig
from metseg.models.segmentor import ResidualUNet3D, SegmentorConfig

KINDS = {"detector": (DetectorConfig, DenseNet3D), "segmentor": (SegmentorConfig, ResidualUNet3D)}


def config_fingerprint(config) -> str:
    blob = json.dumps(config.to_dict(), sort_keys=True).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


@dataclass
class Checkpoint:
    kind: str
    config: Any
    model_state: dict
    modalities: tuple[str, ...] = ()
    optimizer_state: dict | None = None
    position: dict = field(default_factory=dict)
    rng_state: dict = field(default_factory=dict)
    history: list[dict] = field(default_factory=list)
    extra: dict = field(default_factory=dict)

    @property
    def fingerprint(self) -> str:
        return config_fingerprint(self.config)

    def build_model(self) -> torch.nn.Module:
        model = KINDS[self.kind][1](self.config)
        model.load_state_dict(self.model_state)
        model.eval()
        return model

    def sidecar(self) -> dict:
        return {
            "kind": self.kind,
            "config": self.config.to_dict(),
            "fingerprint": self.fingerprint,
            "modalities": list(self.modalities),
            "position": self.position,
            "history": self.history,
            "extra": self.extra,
        }

    def save(self, path: str | Path) -> Path:
        """Write ``path`` (torch format) and ``path.json`` (metadata sidecar)."""
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        torch.save(
            {
                "kind": self.kind,
                "config": self.config.to_dict(),
                "model_state": self.model_state,
                "modalities": list(self.modalities),
                "optimizer_state": self.optimizer_state,
                "position": self.position,
                "rng_state": self.rng_state,
                "history": self.history,
                "extra": self.extra,
            },
            path,
        )
        path.with_name(path.name + ".json").write_text(json.dumps(self.sidecar(), indent=2, default=str))
        return path

    @classmethod
    def load(cls, path: str | Path) -> "Checkpoint":
        blob = torch.load(Path(path), map_location="cpu", weights_only=False)
        config_cls = KINDS[blob["kind"]][0]
        return cls(
            blob["kind"],
            config_cls(**blob["config"]),
            blob["model_state"],
            tuple(blob.get("modalities", ())),
            blob.get("optimizer_state"),
            blob.get("position", {}),
            blob.get("rng_state", {}),
            blob.get("history", []),
            blob.get("extra", {}),
        )


def snapshot(kind: str, model: torch.nn.Module, **kwargs) -> Checkpoint:
    """Detached deep copy of the current model state."""
    state = {k: v.detach().clone() for k, v in model.state_dict().items()}
    kwargs = {k: copy.deepcopy(v) for k, v in kwargs.items()}
    return Checkpoint(kind, model.config, state, **kwargs)
