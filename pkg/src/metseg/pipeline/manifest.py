"""Write-once JSON manifests that tie every emitted number to config and seed."""
from __future__ import annotations

import json
import platform
from dataclasses import asdict, dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Any

import metseg


def now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


@dataclass(frozen=True)
class RunManifest:
    command: str
    config: dict
    seed: int | None = None
    code_version: str = metseg.__version__
    started: str = field(default_factory=now)
    finished: str | None = None
    artifacts: dict[str, str] = field(default_factory=dict)
    metrics: dict[str, Any] = field(default_factory=dict)
    environment: dict[str, str] = field(
        default_factory=lambda: {"python": platform.python_version(), "platform": platform.platform()}
    )

    def to_dict(self) -> dict:
        return asdict(self)

    def write(self, path: str | Path) -> Path:
        """Write once; an existing manifest is never overwritten."""
        path = Path(path)
        if path.exists():
            raise FileExistsError(f"manifest already exists: {path}")
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "x") as fh:
            json.dump(self.to_dict(), fh, indent=2, default=str)
        return path

    @classmethod
    def load(cls, path: str | Path) -> "RunManifest":
        return cls(**json.loads(Path(path).read_text()))


def unique_path(directory: str | Path, stem: str, suffix: str = ".json") -> Path:
    """``stem.json``, or ``stem-2.json`` and so on if taken."""
    directory = Path(directory)
    path = directory / f"{stem}{suffix}"
    n = 2
    while path.exists():
        path = directory / f"{stem}-{n}{suffix}"
        n += 1
    return path
