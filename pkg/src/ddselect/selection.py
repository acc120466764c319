"""Stage 2: percentile-band filtering on difficulty metrics, then greedy
k-center sampling on instruction embeddings.

Percentiles use the nearest-rank method (rank = ceil(p/100 * n), clamped to
[1, n]); bands are closed intervals; k-center is greedy farthest-point
selection (Gonzalez), a 2-approximation of the optimal covering radius,
with ties broken by lowest index for determinism.
"""

from __future__ import annotations

import math
import random
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from ddselect.difficulty import DifficultyVector


class SelectionError(ValueError):
    """Invalid selection input or configuration."""


class EmptyBandError(SelectionError):
    """Band filtering removed every sample; the operator must widen bands."""

    def __init__(self, message: str, distributions: dict[str, dict[str, float]]):
        super().__init__(message)
        self.distributions = distributions


@dataclass(frozen=True)
class MetricBand:
    """Percentile band [p_low, p_high] for one metric."""

    p_low: float
    p_high: float

    def __post_init__(self) -> None:
        if not (0 <= self.p_low < self.p_high <= 100):
            raise SelectionError(f"band needs 0 <= p_low < p_high <= 100, got ({self.p_low}, {self.p_high})")


@dataclass(frozen=True)
class BandConfig:
    """Per-metric percentile bands for the stage-2 filter."""

    d1: MetricBand
    d2: MetricBand
    d3: MetricBand
    use_attention_variant: bool = False

    @classmethod
    def shared(cls, p_low: float, p_high: float, use_attention_variant: bool = False) -> "BandConfig":
        band = MetricBand(p_low, p_high)
        return cls(d1=band, d2=band, d3=band, use_attention_variant=use_attention_variant)

    @classmethod
    def from_sigma(cls, sigma: float, use_attention_variant: bool = False) -> "BandConfig":
        """Sliding difficulty window: [sigma-25, sigma+25], clamped to [0, 100]."""
        return cls.shared(
            max(0.0, sigma - 25.0),
            min(100.0, sigma + 25.0),
            use_attention_variant=use_attention_variant,
        )


@dataclass
class ScoredSample:
    """A sample's difficulty vector plus (once computed) its embedding."""

    sample_id: str
    difficulty: DifficultyVector
    embedding: list[float] | None = None


def metric_values(scored: ScoredSample, use_attention: bool) -> tuple[float, float, float]:
    """The three band-filter metric values for one sample.

    With ``use_attention`` the attention-weighted d2/d3 replace the plain
    values where present (d1 has no attention variant).
    """
    d = scored.difficulty
    m2 = d.atten_d2 if use_attention and d.atten_d2 is not None else d.d2
    m3 = d.atten_d3 if use_attention and d.atten_d3 is not None else d.d3
    return d.d1, m2, m3


def percentile_thresholds(values: Sequence[float], p_low: float, p_high: float) -> tuple[float, float]:
    """Nearest-rank percentile thresholds over ``values``.

    rank = ceil(p/100 * n) clamped to [1, n]; p = 0 maps to the minimum.
    """
    if len(values) == 0:
        raise SelectionError("cannot take percentiles of an empty list")
    for p in (p_low, p_high):
        if not 0 <= p <= 100:
            raise SelectionError(f"percentile {p} outside [0, 100]")
    if p_low > p_high:
        raise SelectionError(f"p_low {p_low} > p_high {p_high}")
    ordered = sorted(values)
    n = len(ordered)

    def nearest_rank(p: float) -> float:
        rank = math.ceil(p * n / 100.0)
        return ordered[min(max(rank, 1), n) - 1]

    return nearest_rank(p_low), nearest_rank(p_high)


def band_thresholds(
    scored: Sequence[ScoredSample], config: BandConfig
) -> dict[str, tuple[float, float]]:
    """tau_low/tau_high per metric over exactly this population."""
    if not scored:
        raise SelectionError("cannot compute thresholds over an empty population")
    columns = list(zip(*(metric_values(s, config.use_attention_variant) for s in scored)))
    bands = (config.d1, config.d2, config.d3)
    return {
        name: percentile_thresholds(column, band.p_low, band.p_high)
        for name, column, band in zip(("d1", "d2", "d3"), columns, bands)
    }


def band_filter(scored: Sequence[ScoredSample], config: BandConfig) -> list[ScoredSample]:
    """Samples whose three metric values all lie inside their closed bands.

    Thresholds are computed over ``scored`` itself; order is preserved.
    """
    taus = band_thresholds(scored, config)
    kept = []
    for s in scored:
        values = metric_values(s, config.use_attention_variant)
        if all(lo <= v <= hi for v, (lo, hi) in zip(values, taus.values())):
            kept.append(s)
    return kept


def kcenter_select(
    points: Sequence[Sequence[float]],
    k: int,
    start: str = "lowest_index",
    seed: int = 0,
    metric: str = "euclidean",
) -> list[int]:
    """Greedy farthest-point (Gonzalez) selection of k indices.

    Starts at index 0 (``lowest_index``) or a seeded random index, then
    repeatedly adds the point farthest from the selected set; ties go to
    the lowest index.  ``k >= len(points)`` returns every index.
    """
    n = len(points)
    if n == 0:
        raise SelectionError("cannot select from an empty point set")
    if k < 1:
        raise SelectionError(f"k must be >= 1, got {k}")
    if k >= n:
        return list(range(n))

    pts = np.asarray(points, dtype=np.float64)
    if pts.ndim != 2:
        raise SelectionError("points must share one embedding dimension")
    if metric == "cosine":
        norms = np.linalg.norm(pts, axis=1, keepdims=True)
        norms[norms == 0.0] = 1.0
        pts = pts / norms
    elif metric != "euclidean":
        raise SelectionError(f"unknown distance metric {metric!r}")

    if start == "lowest_index":
        first = 0
    elif start == "seeded":
        first = random.Random(seed).randrange(n)
    else:
        raise SelectionError(f"unknown start rule {start!r}")

    selected = [first]
    # Squared distances preserve the argmax and avoid n*k square roots.
    dist2 = np.sum((pts - pts[first]) ** 2, axis=1)
    for _ in range(k - 1):
        nxt = int(np.argmax(dist2))  # first occurrence == lowest index
        selected.append(nxt)
        dist2 = np.minimum(dist2, np.sum((pts - pts[nxt]) ** 2, axis=1))
    return selected


@dataclass(frozen=True)
class Stage2Result:
    """Outcome of the full stage-2 composition."""

    selected_ids: tuple[str, ...]
    s_mid_ids: tuple[str, ...]
    thresholds: dict[str, tuple[float, float]]
    budget_truncated: bool  # true when |S_mid| < k and everything was returned


def distribution_summary(scored: Sequence[ScoredSample], use_attention: bool) -> dict[str, dict[str, float]]:
    """Per-metric min/median/max, for empty-band diagnostics."""
    columns = list(zip(*(metric_values(s, use_attention) for s in scored)))
    out: dict[str, dict[str, float]] = {}
    for name, column in zip(("d1", "d2", "d3"), columns):
        lo, hi = percentile_thresholds(column, 0, 100)
        median, _ = percentile_thresholds(column, 50, 100)
        out[name] = {"min": lo, "median": median, "max": hi}
    return out


def select_stage2(
    scored: Sequence[ScoredSample],
    config: BandConfig,
    k: int,
    start: str = "lowest_index",
    seed: int = 0,
    metric: str = "euclidean",
) -> Stage2Result:
    """Thresholds -> band filter -> k-center on the survivors' embeddings.

    Every survivor must carry an embedding by the time this runs.  Raises
    :class:`EmptyBandError` (with per-metric distributions) when the bands
    leave nothing; when |S_mid| < k all of S_mid is returned and the result
    is flagged so the manifest can record the short budget.
    """
    if not scored:
        raise SelectionError("no scored samples to select from")
    thresholds = band_thresholds(scored, config)
    s_mid = band_filter(scored, config)
    if not s_mid:
        raise EmptyBandError(
            "band filter removed every sample; widen the percentile bands",
            distribution_summary(scored, config.use_attention_variant),
        )
    missing = [s.sample_id for s in s_mid if s.embedding is None]
    if missing:
        raise SelectionError(f"samples missing embeddings: {missing[:5]}")
    indices = kcenter_select([s.embedding for s in s_mid], k, start=start, seed=seed, metric=metric)
    return Stage2Result(
        selected_ids=tuple(s_mid[i].sample_id for i in indices),
        s_mid_ids=tuple(s.sample_id for s in s_mid),
        thresholds=thresholds,
        budget_truncated=len(s_mid) < k,
    )
