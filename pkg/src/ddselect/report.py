"""Difficulty-distribution summaries and before/after shift reports.

A snapshot is one model's difficulty vectors over a fixed probe set (taken
from a difficulty-table file).  ``domain_shift`` pairs two snapshots of the
identical id set and reports per-metric deltas plus the dispersion change,
alongside a plot-data file (one row per sample and snapshot) for external
plotting.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable

from ddselect.difficulty import DifficultyVector
from ddselect.selection import percentile_thresholds

BASE_METRICS = ("d1", "d2", "d3")


class ReportError(ValueError):
    """Invalid snapshot input (empty, malformed, or mismatched id sets)."""


@dataclass
class DifficultySnapshot:
    """Difficulty vectors for one model over one probe set."""

    model_id: str
    vectors: dict[str, DifficultyVector]
    timestamp: str = ""

    def __post_init__(self) -> None:
        if not self.vectors:
            raise ReportError("snapshot holds no samples")

    def metric_column(self, metric: str) -> list[float]:
        values = []
        for vec in self.vectors.values():
            value = getattr(vec, metric)
            if value is None:
                raise ReportError(f"metric {metric} missing for some samples")
            values.append(value)
        return values

    @classmethod
    def from_table_file(cls, path: str | Path, model_id: str = "", timestamp: str = "") -> "DifficultySnapshot":
        """Load a difficulty table (one record per line: id, d1, d2, d3, ...)."""
        path = Path(path)
        if not path.is_file():
            raise ReportError(f"difficulty table not found: {path}")
        vectors: dict[str, DifficultyVector] = {}
        with path.open("r", encoding="utf-8") as fh:
            for line_no, line in enumerate(fh, start=1):
                if not line.strip():
                    continue
                try:
                    obj = json.loads(line)
                    atten_d2 = obj.get("atten_d2")
                    atten_d3 = obj.get("atten_d3")
                    vec = DifficultyVector(
                        d1=float(obj["d1"]),
                        d2=float(obj["d2"]),
                        d3=float(obj["d3"]),
                        atten_d2=None if atten_d2 is None else float(atten_d2),
                        atten_d3=None if atten_d3 is None else float(atten_d3),
                        aggregation="none" if atten_d2 is None else "mean",
                        generated_response="",
                    )
                except (KeyError, TypeError, ValueError, json.JSONDecodeError) as exc:
                    raise ReportError(f"{path}:{line_no}: bad difficulty record ({exc})") from exc
                vectors[str(obj["id"])] = vec
        return cls(model_id=model_id or "unknown", vectors=vectors, timestamp=timestamp)


def summarize(snapshot: DifficultySnapshot) -> dict[str, dict[str, float]]:
    """Per-metric min/p25/median/p75/max/mean (nearest-rank quantiles)."""
    stats: dict[str, dict[str, float]] = {}
    for metric in BASE_METRICS:
        column = snapshot.metric_column(metric)
        lo, hi = percentile_thresholds(column, 0, 100)
        p25, p75 = percentile_thresholds(column, 25, 75)
        median, _ = percentile_thresholds(column, 50, 100)
        stats[metric] = {
            "min": lo,
            "p25": p25,
            "median": median,
            "p75": p75,
            "max": hi,
            "mean": math.fsum(column) / len(column),
        }
    return stats


@dataclass
class MetricShift:
    mean_delta: float
    median_delta: float
    frac_decreased: float
    iqr_before: float
    iqr_after: float


@dataclass
class ShiftReport:
    """Paired after-minus-before comparison over an identical probe set."""

    before_model: str
    after_model: str
    sample_count: int
    metrics: dict[str, MetricShift] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "before_model": self.before_model,
            "after_model": self.after_model,
            "sample_count": self.sample_count,
            "metrics": {
                name: {
                    "mean_delta": m.mean_delta,
                    "median_delta": m.median_delta,
                    "frac_decreased": m.frac_decreased,
                    "iqr_before": m.iqr_before,
                    "iqr_after": m.iqr_after,
                }
                for name, m in self.metrics.items()
            },
        }


def domain_shift(before: DifficultySnapshot, after: DifficultySnapshot) -> ShiftReport:
    """Per-metric paired deltas (after - before) over the same sample ids."""
    before_ids, after_ids = set(before.vectors), set(after.vectors)
    if before_ids != after_ids:
        only_before = sorted(before_ids - after_ids)[:5]
        only_after = sorted(after_ids - before_ids)[:5]
        raise ReportError(
            f"snapshots cover different id sets (only-before: {only_before}, only-after: {only_after})"
        )
    ids = sorted(before_ids)
    report = ShiftReport(before_model=before.model_id, after_model=after.model_id, sample_count=len(ids))
    for metric in BASE_METRICS:
        deltas = [getattr(after.vectors[i], metric) - getattr(before.vectors[i], metric) for i in ids]
        mean_delta = math.fsum(deltas) / len(deltas)
        median_delta, _ = percentile_thresholds(deltas, 50, 100)
        frac_decreased = sum(1 for d in deltas if d < 0) / len(deltas)
        b25, b75 = percentile_thresholds(before.metric_column(metric), 25, 75)
        a25, a75 = percentile_thresholds(after.metric_column(metric), 25, 75)
        report.metrics[metric] = MetricShift(
            mean_delta=mean_delta,
            median_delta=median_delta,
            frac_decreased=frac_decreased,
            iqr_before=b75 - b25,
            iqr_after=a75 - a25,
        )
    return report


def write_shift_report(report: ShiftReport, path: str | Path) -> None:
    Path(path).write_text(
        json.dumps(report.to_dict(), sort_keys=True, ensure_ascii=False, separators=(",", ":")) + "\n",
        encoding="utf-8",
    )


def write_plot_data(
    snapshots: Iterable[tuple[str, DifficultySnapshot]], path: str | Path
) -> None:
    """One line per (sample, snapshot): id, d1, d2, d3, snapshot label."""
    with Path(path).open("w", encoding="utf-8") as fh:
        for label, snapshot in snapshots:
            for sample_id in sorted(snapshot.vectors):
                vec = snapshot.vectors[sample_id]
                fh.write(
                    json.dumps(
                        {"id": sample_id, "d1": vec.d1, "d2": vec.d2, "d3": vec.d3, "snapshot": label},
                        ensure_ascii=False,
                        sort_keys=True,
                    )
                    + "\n"
                )
