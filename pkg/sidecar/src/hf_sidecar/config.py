"""Sidecar configuration."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import yaml


class SidecarConfigError(ValueError):
    pass


@dataclass
class SidecarConfig:
    checkpoint: str = ""
    device: str = "cpu"
    max_context_tokens: int = 0  # 0: use the model's position limit
    attention_layer: int = -1  # index into the layer stack; -1 = last
    head_aggregation: str = "mean"
    embedding_pooling: str = "mean"
    max_new_tokens_ceiling: int = 1024

    def validate(self) -> None:
        if not self.checkpoint:
            raise SidecarConfigError("checkpoint is required")
        if self.head_aggregation not in ("mean", "max"):
            raise SidecarConfigError(f"head_aggregation must be mean or max, got {self.head_aggregation!r}")
        if self.embedding_pooling != "mean":
            raise SidecarConfigError(f"embedding_pooling must be 'mean', got {self.embedding_pooling!r}")
        if self.max_new_tokens_ceiling < 1:
            raise SidecarConfigError("max_new_tokens_ceiling must be >= 1")


def load_sidecar_config(path: str | Path) -> SidecarConfig:
    path = Path(path)
    if not path.is_file():
        raise SidecarConfigError(f"config file not found: {path}")
    obj = yaml.safe_load(path.read_text(encoding="utf-8")) or {}
    if not isinstance(obj, dict):
        raise SidecarConfigError("sidecar config must be a mapping")
    known = set(SidecarConfig.__dataclass_fields__)
    unknown = set(obj) - known
    if unknown:
        raise SidecarConfigError(f"unknown config keys: {sorted(unknown)}")
    config = SidecarConfig(**obj)
    config.validate()
    return config
