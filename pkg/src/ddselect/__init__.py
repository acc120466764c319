"""Two-stage training-data selection for LLM domain-adaptation fine-tuning.

Stage 1 filters an instruction corpus by the target model's own quality
score; stage 2 keeps samples whose difficulty metrics (prompt perplexity,
conditional perplexity of the model's own response, conditional perplexity
of the reference response, plus attention-weighted variants) fall inside
percentile bands, then picks a diverse subset by greedy k-center sampling
on instruction embeddings.  Token scoring is delegated to any backend that
speaks the HTTP scorer protocol in :mod:`ddselect.protocol`.
"""

__version__ = "0.1.0"

from ddselect.corpus import CorpusStats, PromptTemplate, Sample, Turn, flatten_prompt, load_corpus
from ddselect.difficulty import (
    DifficultyVector,
    compute_d1,
    compute_d2,
    compute_d3,
    entropy,
    importance_from_attention,
    perplexity_from_entropy,
    ppl_from_logprobs,
    weighted_ppl,
)
from ddselect.selection import BandConfig, MetricBand, ScoredSample, band_filter, kcenter_select, percentile_thresholds, select_stage2

__all__ = [
    "__version__",
    "Sample",
    "Turn",
    "CorpusStats",
    "PromptTemplate",
    "load_corpus",
    "flatten_prompt",
    "DifficultyVector",
    "ppl_from_logprobs",
    "weighted_ppl",
    "importance_from_attention",
    "entropy",
    "perplexity_from_entropy",
    "compute_d1",
    "compute_d2",
    "compute_d3",
    "BandConfig",
    "MetricBand",
    "ScoredSample",
    "percentile_thresholds",
    "band_filter",
    "kcenter_select",
    "select_stage2",
]
