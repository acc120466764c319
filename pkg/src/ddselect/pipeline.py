"""End-to-end orchestration of the two-stage selection.

Stage 1 quality-filters the corpus with the model's own scores; stage 2
computes the difficulty vectors for the survivors only, band-filters them,
embeds the band survivors, and k-center-samples the budget.  Every backend
response goes through the content-addressed cache, which doubles as the
crash checkpoint: rerunning after an abort resumes where scoring stopped,
and a fully warm rerun issues no backend calls and reproduces the manifest
byte for byte.
"""

from __future__ import annotations

import hashlib
import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable

from filelock import FileLock, Timeout

from ddselect import __version__
from ddselect.cache import CachingBackend, ScoreCache
from ddselect.config import ConfigError, PipelineConfig
from ddselect.corpus import Sample, dumps_sample_line, flatten_prompt, load_corpus
from ddselect.difficulty import DifficultyVector, UnscoreableSampleError, compute_difficulty
from ddselect.manifest import Manifest, StageCounts
from ddselect.protocol.client import ScorerBackend, build_backend
from ddselect.quality import QualityResult, RetryPolicy, is_retained, load_quality_template, stage1_filter
from ddselect.selection import (
    EmptyBandError,
    ScoredSample,
    Stage2Result,
    band_filter,
    distribution_summary,
    metric_values,
    percentile_thresholds,
    select_stage2,
)

STAGE1_RESULTS_FILE = "stage1_results.jsonl"
DIFFICULTY_TABLE_FILE = "difficulties.jsonl"
SELECTED_SUBSET_FILE = "selected.jsonl"
MANIFEST_FILE = "manifest.json"
SWEEP_SUMMARY_FILE = "sweep_summary.jsonl"
LOCK_FILE = ".lock"


class PipelineError(Exception):
    """Operational pipeline failure with a stable CLI exit category."""

    exit_code = 1


class EmptySelectionError(PipelineError):
    """A stage ended with nothing selectable (impossible threshold, bands too tight)."""

    exit_code = 4

    def __init__(self, message: str, distributions: dict | None = None):
        super().__init__(message)
        self.distributions = distributions or {}


@dataclass
class _ScoringOutcome:
    scored: list[ScoredSample]
    samples_by_id: dict[str, Sample]
    unscoreable_ids: list[str]


def _write_jsonl(path: Path, lines: Iterable[str]) -> None:
    with path.open("w", encoding="utf-8") as fh:
        for line in lines:
            fh.write(line + "\n")


def _quality_line(result: QualityResult) -> str:
    return json.dumps(
        {
            "sample_id": result.sample_id,
            "raw_output": result.raw_output,
            "score": result.score,
            "status": result.status,
            "warning": result.warning,
        },
        ensure_ascii=False,
        sort_keys=True,
    )


def _difficulty_line(sample_id: str, vec: DifficultyVector) -> str:
    return json.dumps(
        {
            "id": sample_id,
            "d1": vec.d1,
            "d2": vec.d2,
            "d3": vec.d3,
            "atten_d2": vec.atten_d2,
            "atten_d3": vec.atten_d3,
        },
        ensure_ascii=False,
        sort_keys=True,
    )


def _methodology_flags(config: PipelineConfig, template_text: str) -> dict:
    return {
        "logprob_base": "natural",
        "decoding": "greedy",
        "percentile_method": "nearest_rank",
        "band_intervals": "closed",
        "quality_threshold_comparison": ">=",
        "attention_span_renormalization": "none",
        "last_token_importance": "mean_of_predecessors",
        "aggregation": config.aggregation,
        "multi_turn_linearization": {
            "turn": config.flatten_turn_template,
            "instruction": config.flatten_instruction_template,
        },
        "kcenter": {
            "algorithm": "greedy_farthest_point",
            "start": config.kcenter_start,
            "seed": config.kcenter_seed,
            "metric": config.distance_metric,
        },
        "quality_template_sha256": hashlib.sha256(template_text.encode("utf-8")).hexdigest(),
    }


class _Run:
    """State shared by the stages of one pipeline execution."""

    def __init__(self, config: PipelineConfig, backend: ScorerBackend | None):
        try:
            config.validate()
        except ConfigError:
            raise
        self.config = config
        self.out_dir = Path(config.output_dir)
        self.out_dir.mkdir(parents=True, exist_ok=True)
        self.cache = ScoreCache(config.cache_dir)
        raw_backend = (
            backend if backend is not None else build_backend(config.backend_url, retries=config.backend_retries)
        )
        self.backend = CachingBackend(raw_backend, self.cache)
        self.template_text = load_quality_template(config.quality_template_path)
        self.counts = StageCounts()
        self.warnings: list[str] = []

    # --- stage 1 ---------------------------------------------------------

    def stage1(self) -> list[Sample]:
        config = self.config
        samples, stats = load_corpus(config.corpus_path, on_error=config.corpus_on_error)
        retained: list[Sample] = []
        lines: list[str] = []
        pairs = stage1_filter(
            samples,
            self.backend,
            delta=config.delta,
            template=self.template_text,
            params=config.gen_params(),
            retry=RetryPolicy(parse_retries=config.parse_retries),
            concurrency=config.concurrency,
        )
        for sample, result in pairs:
            lines.append(_quality_line(result))
            if result.status == "parse_failed":
                self.counts.stage1_parse_failed += 1
            elif result.status == "backend_failed":
                self.counts.stage1_backend_failed += 1
            if is_retained(result, config.delta):
                retained.append(sample)
        _write_jsonl(self.out_dir / STAGE1_RESULTS_FILE, lines)
        self.counts.loaded = stats.count
        self.counts.rejected_lines = stats.rejected
        self.counts.stage1_retained = len(retained)
        return retained

    # --- stage 2: difficulty scoring ---------------------------------------

    def score_difficulties(self, survivors: list[Sample]) -> _ScoringOutcome:
        config = self.config
        template = config.prompt_template()
        params = config.gen_params()

        def work(sample: Sample) -> tuple[Sample, DifficultyVector | None]:
            try:
                return sample, compute_difficulty(sample, self.backend, template, params, config.aggregation)
            except UnscoreableSampleError:
                return sample, None

        if config.concurrency <= 1:
            results = [work(s) for s in survivors]
        else:
            with ThreadPoolExecutor(max_workers=config.concurrency) as pool:
                results = list(pool.map(work, survivors))

        outcome = _ScoringOutcome(scored=[], samples_by_id={}, unscoreable_ids=[])
        lines: list[str] = []
        for sample, vec in results:
            if vec is None:
                outcome.unscoreable_ids.append(sample.id)
                continue
            outcome.scored.append(ScoredSample(sample_id=sample.id, difficulty=vec))
            outcome.samples_by_id[sample.id] = sample
            lines.append(_difficulty_line(sample.id, vec))
        _write_jsonl(self.out_dir / DIFFICULTY_TABLE_FILE, lines)
        self.counts.unscoreable = len(outcome.unscoreable_ids)
        return outcome

    # --- stage 2: banding, embeddings, k-center ------------------------------

    def select(self, outcome: _ScoringOutcome) -> Stage2Result:
        config = self.config
        bands = config.band_config()
        if not outcome.scored:
            raise EmptySelectionError("no scoreable samples survived stage 1")

        s_mid = band_filter(outcome.scored, bands)
        if not s_mid:
            raise EmptySelectionError(
                "band filter removed every sample; widen the percentile bands",
                distribution_summary(outcome.scored, bands.use_attention_variant),
            )

        # Embeddings are computed only for the band survivors.
        template = config.prompt_template()

        def embed(scored: ScoredSample) -> list[float]:
            sample = outcome.samples_by_id[scored.sample_id]
            return self.backend.embed(flatten_prompt(sample, template))

        if config.concurrency <= 1:
            vectors = [embed(s) for s in s_mid]
        else:
            with ThreadPoolExecutor(max_workers=config.concurrency) as pool:
                vectors = list(pool.map(embed, s_mid))
        for scored, vector in zip(s_mid, vectors):
            scored.embedding = vector

        try:
            result = select_stage2(
                outcome.scored,
                bands,
                config.k,
                start=config.kcenter_start,
                seed=config.kcenter_seed,
                metric=config.distance_metric,
            )
        except EmptyBandError as exc:
            raise EmptySelectionError(str(exc), exc.distributions) from exc
        self.counts.s_mid = len(result.s_mid_ids)
        self.counts.final = len(result.selected_ids)
        if result.budget_truncated:
            self.warnings.append(
                f"band survivors ({len(result.s_mid_ids)}) below budget k={config.k}; returning all of them"
            )
        return result

    # --- outputs -----------------------------------------------------------

    def difficulty_stats(self, outcome: _ScoringOutcome, result: Stage2Result) -> dict[str, dict[str, float]]:
        bands = self.config.band_config()
        columns = list(zip(*(metric_values(s, bands.use_attention_variant) for s in outcome.scored)))
        stats: dict[str, dict[str, float]] = {}
        for name, column in zip(("d1", "d2", "d3"), columns):
            lo, hi = percentile_thresholds(column, 0, 100)
            median, _ = percentile_thresholds(column, 50, 100)
            tau_low, tau_high = result.thresholds[name]
            stats[name] = {"min": lo, "median": median, "max": hi, "tau_low": tau_low, "tau_high": tau_high}
        return stats

    def build_manifest(self, outcome: _ScoringOutcome, result: Stage2Result) -> Manifest:
        self.counts.check_monotone()
        return Manifest(
            selected_ids=list(result.selected_ids),
            config=self.config.snapshot(),
            config_hash=self.config.config_hash(),
            model_id=self.backend.model_info().model_id,
            counts=self.counts,
            difficulty_stats=self.difficulty_stats(outcome, result),
            flags=_methodology_flags(self.config, self.template_text),
            tool_version=__version__,
            budget_truncated=result.budget_truncated,
            warnings=list(self.warnings),
        )

    def write_subset(self, outcome: _ScoringOutcome, result: Stage2Result) -> None:
        lines = [dumps_sample_line(outcome.samples_by_id[sid]) for sid in result.selected_ids]
        _write_jsonl(self.out_dir / SELECTED_SUBSET_FILE, lines)


def _locked(cache_dir: str | Path) -> FileLock:
    cache_dir = Path(cache_dir)
    cache_dir.mkdir(parents=True, exist_ok=True)
    return FileLock(str(cache_dir / LOCK_FILE))


def run(config: PipelineConfig, backend: ScorerBackend | None = None) -> Manifest:
    """Execute both stages end to end; returns the written manifest.

    Raises :class:`EmptySelectionError` when stage 1 retains nothing or the
    bands filter everything out, and propagates backend errors after the
    client's retry budget (the cache makes the rerun a resume).
    """
    lock = _locked(config.cache_dir)
    try:
        lock.acquire(timeout=1.0)
    except Timeout:
        raise PipelineError(f"cache directory {config.cache_dir!r} is locked by another pipeline process")
    try:
        state = _Run(config, backend)
        survivors = state.stage1()
        if not survivors:
            raise EmptySelectionError(
                f"stage 1 retained no samples at delta={config.delta} "
                f"({state.counts.loaded} loaded, {state.counts.stage1_parse_failed} parse failures)"
            )
        outcome = state.score_difficulties(survivors)
        result = state.select(outcome)
        state.write_subset(outcome, result)
        manifest = state.build_manifest(outcome, result)
        manifest.write(state.out_dir / MANIFEST_FILE)
        return manifest
    finally:
        lock.release()


def score_only(config: PipelineConfig, backend: ScorerBackend | None = None) -> Path:
    """Run stage 1 plus difficulty scoring, cache everything, skip selection.

    Returns the difficulty-table path.  A later :func:`run` with the same
    cache directory performs no difficulty backend calls.
    """
    lock = _locked(config.cache_dir)
    try:
        lock.acquire(timeout=1.0)
    except Timeout:
        raise PipelineError(f"cache directory {config.cache_dir!r} is locked by another pipeline process")
    try:
        state = _Run(config, backend)
        survivors = state.stage1()
        state.score_difficulties(survivors)
        return state.out_dir / DIFFICULTY_TABLE_FILE
    finally:
        lock.release()


def sweep(
    config: PipelineConfig, sigmas: list[float], backend: ScorerBackend | None = None
) -> list[tuple[float, Manifest]]:
    """One stage-2 selection per difficulty-window center sigma.

    Each sigma expands to the shared band [sigma-25, sigma+25] clamped to
    [0, 100].  All runs share the score cache, so difficulties are computed
    once; outputs land in ``<output_dir>/sigma_<value>/`` plus a summary
    table at the top level.
    """
    if not sigmas:
        raise ConfigError("sweep needs at least one sigma value")
    base_out = Path(config.output_dir)
    base_out.mkdir(parents=True, exist_ok=True)
    results: list[tuple[float, Manifest]] = []
    summary_lines: list[str] = []
    for sigma in sigmas:
        low, high = max(0.0, sigma - 25.0), min(100.0, sigma + 25.0)
        if not low < high:
            raise ConfigError(f"sigma {sigma} yields an empty band ({low}, {high})")
        sub = PipelineConfig(**{**config.snapshot(), "band_low": low, "band_high": high,
                                "d1_band": None, "d2_band": None, "d3_band": None,
                                "output_dir": str(base_out / f"sigma_{sigma:g}")})
        manifest = run(sub, backend=backend)
        results.append((sigma, manifest))
        summary_lines.append(
            json.dumps(
                {
                    "sigma": sigma,
                    "band": [low, high],
                    "s_mid": manifest.counts.s_mid,
                    "final": manifest.counts.final,
                    "manifest_hash": manifest.manifest_hash(),
                    "output_dir": sub.output_dir,
                },
                ensure_ascii=False,
                sort_keys=True,
            )
        )
    _write_jsonl(base_out / SWEEP_SUMMARY_FILE, summary_lines)
    return results
