"""The reproducible record of one selection run.

A manifest is self-contained for audit: the selected ids in order, the full
config snapshot and its hash, the backend identity, per-stage counts, the
difficulty distribution summary with the band thresholds actually applied,
and the methodology flags an auditor needs to reproduce the run.  It is
serialized canonically (sorted keys, no timestamps), so two runs with
identical inputs produce byte-identical manifest files.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any


@dataclass
class StageCounts:
    loaded: int = 0
    rejected_lines: int = 0
    stage1_retained: int = 0
    stage1_parse_failed: int = 0
    stage1_backend_failed: int = 0
    unscoreable: int = 0
    s_mid: int = 0
    final: int = 0

    def check_monotone(self) -> None:
        if not (self.final <= self.s_mid <= self.stage1_retained <= self.loaded):
            raise ValueError(
                f"inconsistent stage counts: final {self.final} <= s_mid {self.s_mid} "
                f"<= stage1_retained {self.stage1_retained} <= loaded {self.loaded} violated"
            )


@dataclass
class Manifest:
    selected_ids: list[str]
    config: dict[str, Any]
    config_hash: str
    model_id: str
    counts: StageCounts
    difficulty_stats: dict[str, dict[str, float]]
    flags: dict[str, Any]
    tool_version: str
    budget_truncated: bool = False
    warnings: list[str] = field(default_factory=list)

    def to_dict(self) -> dict[str, Any]:
        obj = asdict(self)
        obj["counts"] = asdict(self.counts)
        return obj

    def to_bytes(self) -> bytes:
        return (
            json.dumps(self.to_dict(), sort_keys=True, ensure_ascii=False, separators=(",", ":")) + "\n"
        ).encode("utf-8")

    def manifest_hash(self) -> str:
        return hashlib.sha256(self.to_bytes()).hexdigest()

    def write(self, path: str | Path) -> None:
        Path(path).write_bytes(self.to_bytes())

    @classmethod
    def from_file(cls, path: str | Path) -> "Manifest":
        obj = json.loads(Path(path).read_text(encoding="utf-8"))
        counts = StageCounts(**obj.pop("counts"))
        return cls(counts=counts, **obj)
