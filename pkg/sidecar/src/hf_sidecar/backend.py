"""Score, generate, and embed with a transformers causal LM.

Scoring runs teacher-forced: the input is BOS + context + target, and each
target token's natural-log probability is read off the previous position's
log-softmax.  The BOS prefix makes the first target token's probability
well defined even with an empty context.  Attention blocks come from one
configured layer, aggregated over heads, restricted to the target span and
strictly lower-triangular.  One request is handled at a time per worker.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass

import torch
from transformers import AutoModelForCausalLM, AutoTokenizer

from hf_sidecar.config import SidecarConfig


class BackendRequestError(Exception):
    """Request the model cannot serve; carries the wire error code."""

    def __init__(self, code: str, message: str, details: dict | None = None):
        super().__init__(message)
        self.code = code
        self.details = details or {}


@dataclass
class ScoreResult:
    target_tokens: list[str]
    logprobs: list[float]
    attention_rows: list[list[float]] | None
    target_roundtrip_ok: bool


class HFScorerBackend:
    def __init__(self, config: SidecarConfig):
        config.validate()
        self.config = config
        self.tokenizer = AutoTokenizer.from_pretrained(config.checkpoint)
        self.model = AutoModelForCausalLM.from_pretrained(
            config.checkpoint, attn_implementation="eager"
        )
        self.model.to(config.device)
        self.model.eval()
        self._lock = threading.Lock()  # single-model worker: one request at a time

        depth = self.model.config.num_hidden_layers
        layer = config.attention_layer
        if not -depth <= layer < depth:
            raise BackendRequestError(
                "bad_config", f"attention layer {layer} outside model depth {depth}"
            )
        self.attention_layer = layer % depth
        self.window = config.max_context_tokens or int(
            getattr(self.model.config, "max_position_embeddings", 0) or 2048
        )
        bos = self.tokenizer.bos_token_id
        self.bos_id = bos if bos is not None else self.tokenizer.eos_token_id

    # --- helpers ---------------------------------------------------------

    def _encode(self, text: str) -> list[int]:
        return self.tokenizer(text, add_special_tokens=False).input_ids

    def _check_window(self, context_tokens: int, target_tokens: int) -> None:
        used = context_tokens + target_tokens + 1  # +1 for the BOS prefix
        if used > self.window:
            raise BackendRequestError(
                "window_exceeded",
                f"{context_tokens} context + {target_tokens} target tokens exceed window {self.window}",
                {"context_tokens": context_tokens, "target_tokens": target_tokens, "window": self.window},
            )

    # --- protocol operations ----------------------------------------------

    def score(self, context: str, target: str, want_attention: bool) -> ScoreResult:
        target_ids = self._encode(target)
        if not target_ids:
            raise BackendRequestError("empty_target", "target tokenizes to zero tokens")
        context_ids = self._encode(context) if context else []
        self._check_window(len(context_ids), len(target_ids))

        input_ids = torch.tensor([[self.bos_id] + context_ids + target_ids], device=self.config.device)
        start = 1 + len(context_ids)  # absolute position of the first target token
        with self._lock, torch.no_grad():
            out = self.model(input_ids, output_attentions=want_attention)
        logits = out.logits[0].float()
        logprob_table = torch.log_softmax(logits, dim=-1)
        logprobs = [
            min(0.0, logprob_table[start + j - 1, token_id].item())
            for j, token_id in enumerate(target_ids)
        ]

        attention_rows = None
        if want_attention:
            layer = out.attentions[self.attention_layer][0].float()  # [heads, L, L]
            agg = layer.mean(dim=0) if self.config.head_aggregation == "mean" else layer.max(dim=0).values
            n = len(target_ids)
            attention_rows = [
                [max(0.0, agg[start + j, start + i].item()) for i in range(j)] for j in range(n)
            ]

        tokens = [self.tokenizer.decode([t]) for t in target_ids]
        roundtrip_ok = self.tokenizer.decode(target_ids) == target
        return ScoreResult(
            target_tokens=tokens,
            logprobs=logprobs,
            attention_rows=attention_rows,
            target_roundtrip_ok=roundtrip_ok,
        )

    def generate(self, prompt: str, max_new_tokens: int, stop: list[str]) -> str:
        if max_new_tokens > self.config.max_new_tokens_ceiling:
            raise BackendRequestError(
                "bad_request",
                f"max_new_tokens {max_new_tokens} exceeds ceiling {self.config.max_new_tokens_ceiling}",
            )
        prompt_ids = self._encode(prompt)
        if not prompt_ids:
            raise BackendRequestError("empty_target", "prompt tokenizes to zero tokens")
        if 1 + len(prompt_ids) + max_new_tokens > self.window:
            raise BackendRequestError(
                "window_exceeded",
                f"prompt ({len(prompt_ids)} tokens) + {max_new_tokens} new tokens exceed window {self.window}",
                {"context_tokens": len(prompt_ids), "target_tokens": max_new_tokens, "window": self.window},
            )
        input_ids = torch.tensor([[self.bos_id] + prompt_ids], device=self.config.device)
        with self._lock, torch.no_grad():
            sequence = self.model.generate(
                input_ids,
                attention_mask=torch.ones_like(input_ids),
                do_sample=False,
                max_new_tokens=max_new_tokens,
                pad_token_id=self.tokenizer.eos_token_id,
            )
        text = self.tokenizer.decode(sequence[0, input_ids.shape[1] :], skip_special_tokens=True)
        for marker in stop:
            idx = text.find(marker)
            if idx >= 0:
                text = text[:idx]
        return text

    def embed(self, text: str) -> list[float]:
        ids = self._encode(text)
        if not ids:
            raise BackendRequestError("empty_target", "text tokenizes to zero tokens")
        self._check_window(0, len(ids))
        input_ids = torch.tensor([[self.bos_id] + ids], device=self.config.device)
        with self._lock, torch.no_grad():
            out = self.model(input_ids, output_hidden_states=True)
        # Mean over the text's own tokens (BOS excluded).
        hidden = out.hidden_states[-1][0, 1:, :].float()
        return hidden.mean(dim=0).tolist()

    def info(self) -> dict:
        return {
            "model_id": self.config.checkpoint,
            "tokenizer_id": getattr(self.tokenizer, "name_or_path", self.config.checkpoint),
            "attention_layer_policy": (
                f"layer={self.attention_layer},heads={self.config.head_aggregation},bos=prepended"
            ),
            "embedding_dim": int(self.model.config.hidden_size),
        }
