"""Pipeline configuration: defaults, YAML config files, dotted-path overrides.

Defaults follow the reference hyperparameters this tool ships with: quality
threshold 90, percentile band 10-60 shared by all three metrics, and a
5000-sample budget.  ``DDS_BACKEND_URL`` overrides the backend endpoint;
explicit ``--set`` overrides beat both the file and the environment.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import yaml

from ddselect.corpus import PromptTemplate
from ddselect.protocol.types import GenParams
from ddselect.selection import BandConfig, MetricBand

ENV_BACKEND_URL = "DDS_BACKEND_URL"


class ConfigError(ValueError):
    """Bad config file, unknown field, or type mismatch in an override."""


@dataclass
class PipelineConfig:
    corpus_path: str = ""
    backend_url: str = "http://127.0.0.1:8777"
    output_dir: str = "selection_out"
    cache_dir: str = "score_cache"
    delta: int = 90
    band_low: float = 10.0
    band_high: float = 60.0
    d1_band: list[float] | None = None
    d2_band: list[float] | None = None
    d3_band: list[float] | None = None
    use_attention_bands: bool = False
    k: int = 5000
    aggregation: str = "mean"
    max_new_tokens: int = 256
    stop_sequences: list[str] = field(default_factory=list)
    concurrency: int = 4
    quality_template_path: str | None = None
    flatten_turn_template: str = "{user}\n{assistant}\n"
    flatten_instruction_template: str = "{instruction}"
    corpus_on_error: str = "skip_and_count"
    parse_retries: int = 2
    backend_retries: int = 3
    kcenter_start: str = "lowest_index"
    kcenter_seed: int = 0
    distance_metric: str = "euclidean"

    # --- derived views ---------------------------------------------------

    def band_config(self) -> BandConfig:
        def metric_band(override: list[float] | None) -> MetricBand:
            if override is None:
                return MetricBand(self.band_low, self.band_high)
            if len(override) != 2:
                raise ConfigError(f"per-metric band must be [low, high], got {override!r}")
            return MetricBand(float(override[0]), float(override[1]))

        return BandConfig(
            d1=metric_band(self.d1_band),
            d2=metric_band(self.d2_band),
            d3=metric_band(self.d3_band),
            use_attention_variant=self.use_attention_bands,
        )

    def gen_params(self) -> GenParams:
        return GenParams(max_new_tokens=self.max_new_tokens, stop_sequences=tuple(self.stop_sequences))

    def prompt_template(self) -> PromptTemplate:
        return PromptTemplate(turn=self.flatten_turn_template, instruction=self.flatten_instruction_template)

    def validate(self) -> None:
        if not self.corpus_path:
            raise ConfigError("corpus_path is required")
        if not Path(self.corpus_path).is_file():
            raise ConfigError(f"corpus file not found: {self.corpus_path}")
        if self.k < 1:
            raise ConfigError(f"k must be >= 1, got {self.k}")
        if self.concurrency < 1:
            raise ConfigError(f"concurrency must be >= 1, got {self.concurrency}")
        if self.aggregation not in ("mean", "max", "none"):
            raise ConfigError(f"aggregation must be mean/max/none, got {self.aggregation!r}")
        if self.aggregation == "none" and self.use_attention_bands:
            raise ConfigError("use_attention_bands requires aggregation mean or max")
        if self.corpus_on_error not in ("fail_fast", "skip_and_count"):
            raise ConfigError(f"corpus_on_error must be fail_fast or skip_and_count")
        if self.quality_template_path is not None and not Path(self.quality_template_path).is_file():
            raise ConfigError(f"quality template not found: {self.quality_template_path}")
        try:
            self.band_config()
            self.gen_params()
        except Exception as exc:
            raise ConfigError(str(exc)) from exc

    def snapshot(self) -> dict[str, Any]:
        """JSON-ready copy of every field, as it will appear in the manifest."""
        return dataclasses.asdict(self)

    def config_hash(self) -> str:
        payload = json.dumps(self.snapshot(), sort_keys=True, ensure_ascii=False, separators=(",", ":"))
        return hashlib.sha256(payload.encode("utf-8")).hexdigest()


#: One-line help per field, surfaced in ``--help`` so defaults stay visible.
FIELD_DOCS: dict[str, str] = {
    "corpus_path": "line-delimited corpus file to select from",
    "backend_url": "scorer endpoint (http(s)://... or mock://<config file>)",
    "output_dir": "directory for manifest, subset, results and tables",
    "cache_dir": "score-cache directory (owned by one run at a time)",
    "delta": "stage-1 quality threshold; keep samples scored >= delta",
    "band_low": "shared lower percentile for all three difficulty bands",
    "band_high": "shared upper percentile for all three difficulty bands",
    "d1_band": "optional [low, high] percentile override for d1",
    "d2_band": "optional [low, high] percentile override for d2",
    "d3_band": "optional [low, high] percentile override for d3",
    "use_attention_bands": "band on atten_d2/atten_d3 instead of d2/d3",
    "k": "sampling budget: size of the final selected subset",
    "aggregation": "attention importance aggregation: mean, max or none",
    "max_new_tokens": "generation cap for quality scoring and d2 responses",
    "stop_sequences": "generation stop strings",
    "concurrency": "max in-flight backend requests",
    "quality_template_path": "override the packaged quality-prompt template",
    "flatten_turn_template": "per-history-turn format ({user}/{assistant})",
    "flatten_instruction_template": "final instruction format ({instruction})",
    "corpus_on_error": "bad corpus lines: fail_fast or skip_and_count",
    "parse_retries": "stage-1 re-asks after an unparseable quality score",
    "backend_retries": "transport retries per backend request",
    "kcenter_start": "k-center start rule: lowest_index or seeded",
    "kcenter_seed": "seed for the seeded k-center start rule",
    "distance_metric": "k-center distance: euclidean or cosine",
}


def _coerce(field_name: str, current: Any, raw: str) -> Any:
    """Parse an override string to the field's type."""
    fields = {f.name: f for f in dataclasses.fields(PipelineConfig)}
    if field_name not in fields:
        raise ConfigError(f"unknown config field {field_name!r}")
    if isinstance(current, bool):
        if raw.lower() in ("true", "1", "yes"):
            return True
        if raw.lower() in ("false", "0", "no"):
            return False
        raise ConfigError(f"{field_name} expects a boolean, got {raw!r}")
    if isinstance(current, int) and not isinstance(current, bool):
        try:
            return int(raw)
        except ValueError as exc:
            raise ConfigError(f"{field_name} expects an integer, got {raw!r}") from exc
    if isinstance(current, float):
        try:
            return float(raw)
        except ValueError as exc:
            raise ConfigError(f"{field_name} expects a number, got {raw!r}") from exc
    if isinstance(current, str) or current is None:
        if current is None and raw.startswith(("[", "{")):
            return yaml.safe_load(raw)
        return raw
    if isinstance(current, list):
        value = yaml.safe_load(raw)
        if not isinstance(value, list):
            raise ConfigError(f"{field_name} expects a list, got {raw!r}")
        return value
    raise ConfigError(f"cannot override field {field_name!r}")


def load_config(
    config_path: str | Path | None,
    overrides: dict[str, str] | None = None,
    env: dict[str, str] | None = None,
) -> PipelineConfig:
    """Build a config from defaults < file < environment < overrides."""
    config = PipelineConfig()
    if config_path is not None:
        path = Path(config_path)
        if not path.is_file():
            raise ConfigError(f"config file not found: {path}")
        try:
            obj = yaml.safe_load(path.read_text(encoding="utf-8"))
        except yaml.YAMLError as exc:
            raise ConfigError(f"config file {path} is not valid YAML: {exc}") from exc
        if obj is None:
            obj = {}
        if not isinstance(obj, dict):
            raise ConfigError(f"config file {path} must hold a mapping")
        known = {f.name for f in dataclasses.fields(PipelineConfig)}
        unknown = set(obj) - known
        if unknown:
            raise ConfigError(f"unknown config fields: {sorted(unknown)}")
        for key, value in obj.items():
            setattr(config, key, value)

    env = os.environ if env is None else env
    if env.get(ENV_BACKEND_URL):
        config.backend_url = env[ENV_BACKEND_URL]

    for dotted, raw in (overrides or {}).items():
        current = getattr(config, dotted, None)
        if not hasattr(config, dotted):
            raise ConfigError(f"unknown config field {dotted!r}")
        setattr(config, dotted, _coerce(dotted, current, raw))
    return config
