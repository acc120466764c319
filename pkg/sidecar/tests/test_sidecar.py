"""Sidecar conformance and numeric fidelity against a direct forward pass."""

from __future__ import annotations

import pytest
import torch
from fastapi.testclient import TestClient
from transformers import AutoModelForCausalLM, AutoTokenizer

from hf_sidecar.backend import BackendRequestError, HFScorerBackend
from hf_sidecar.config import SidecarConfig, SidecarConfigError, load_sidecar_config
from hf_sidecar.service import create_app

# Shared protocol fixtures: the same suite the mock backend passes.
from ddselect.protocol.client import HttpScorerClient
from ddselect.protocol.conformance import ConformanceProbe, check_stop_sequences, run_conformance
from ddselect.protocol.errors import ContextWindowError, EmptyTargetError
from ddselect.protocol.types import GenParams


@pytest.fixture(scope="session")
def client(backend) -> HttpScorerClient:
    test_client = TestClient(create_app(backend), raise_server_exceptions=False)
    return HttpScorerClient("http://testserver", http_client=test_client, retries=1)


PROBE = ConformanceProbe(
    score_texts=("hello", "hello world", "symptom: fever and cough"),
    generate_prompt="the patient reports",
    embed_texts=("alpha", "beta", "gamma ray", "alpha beta"),
    context="case notes:",
    expects_attention=True,
    gen_params=GenParams(max_new_tokens=8),
)


class TestProtocolConformance:
    def test_shared_suite_passes(self, client):
        passed = run_conformance(client, PROBE)
        assert len(passed) == 5

    def test_stop_sequence_contract(self, client):
        full = client.generate(PROBE.generate_prompt, GenParams(max_new_tokens=12))
        assert full, "tiny model produced nothing to truncate"
        marker = full[len(full) // 2]
        check_stop_sequences(client, PROBE, stop=marker)

    def test_info_fields(self, client, checkpoint_dir):
        info = client.model_info()
        assert info.model_id == str(checkpoint_dir)
        assert info.embedding_dim == 32
        assert "heads=mean" in info.attention_layer_policy
        assert "layer=1" in info.attention_layer_policy  # last of two layers


class TestLogprobOracle:
    def test_per_token_match_within_1e4(self, client, checkpoint_dir):
        tokenizer = AutoTokenizer.from_pretrained(checkpoint_dir)
        model = AutoModelForCausalLM.from_pretrained(checkpoint_dir, attn_implementation="eager")
        model.eval()

        cases = [("", "hello world"), ("case notes:", " fever for two days"), ("", "x")]
        for context, target in cases:
            record = client.score_target(context, target)
            context_ids = tokenizer(context, add_special_tokens=False).input_ids if context else []
            target_ids = tokenizer(target, add_special_tokens=False).input_ids
            ids = [tokenizer.bos_token_id] + context_ids + target_ids
            with torch.no_grad():
                logits = model(torch.tensor([ids])).logits[0].double()
            table = torch.log_softmax(logits, dim=-1)
            start = 1 + len(context_ids)
            expected = [table[start + j - 1, t].item() for j, t in enumerate(target_ids)]
            assert len(record.logprobs) == len(expected)
            for got, want in zip(record.logprobs, expected):
                assert abs(got - want) <= 1e-4, (context, target, got, want)


class TestAttention:
    def test_seven_token_block_shape(self, client):
        target = "abcdefg"  # seven bytes -> seven tokens
        record = client.score_target("", target, want_attention=True)
        assert len(record.target_tokens) == 7
        block = record.attention
        assert block is not None and block.n == 7
        for j, row in enumerate(block.rows):
            assert len(row) == j
            assert all(w >= 0 for w in row)

    def test_matches_direct_head_mean(self, client, checkpoint_dir):
        tokenizer = AutoTokenizer.from_pretrained(checkpoint_dir)
        model = AutoModelForCausalLM.from_pretrained(checkpoint_dir, attn_implementation="eager")
        model.eval()
        target = "abcd"
        record = client.score_target("", target, want_attention=True)
        ids = [tokenizer.bos_token_id] + tokenizer(target, add_special_tokens=False).input_ids
        with torch.no_grad():
            out = model(torch.tensor([ids]), output_attentions=True)
        mean_heads = out.attentions[-1][0].double().mean(dim=0)
        for j, row in enumerate(record.attention.rows):
            for i, got in enumerate(row):
                want = mean_heads[1 + j, 1 + i].item()
                assert abs(got - want) <= 1e-6

    def test_full_context_row_sums_bounded(self, checkpoint_dir):
        model = AutoModelForCausalLM.from_pretrained(checkpoint_dir, attn_implementation="eager")
        model.eval()
        tokenizer = AutoTokenizer.from_pretrained(checkpoint_dir)
        ids = [tokenizer.bos_token_id] + tokenizer("row sum check", add_special_tokens=False).input_ids
        with torch.no_grad():
            out = model(torch.tensor([ids]), output_attentions=True)
        for layer in out.attentions:
            sums = layer[0].mean(dim=0).sum(dim=-1)
            assert bool((sums <= 1 + 1e-5).all())


class TestGeneration:
    def test_greedy_determinism(self, client):
        params = GenParams(max_new_tokens=10)
        outputs = {client.generate("steady prompt", params) for _ in range(3)}
        assert len(outputs) == 1

    def test_ceiling_enforced(self, backend):
        with pytest.raises(BackendRequestError, match="ceiling"):
            backend.generate("p", max_new_tokens=100000, stop=[])


class TestErrors:
    def test_empty_target(self, client):
        with pytest.raises(EmptyTargetError):
            client.score_target("", "")

    def test_window_exceeded_reports_counts(self, checkpoint_dir):
        tight = HFScorerBackend(SidecarConfig(checkpoint=str(checkpoint_dir), max_context_tokens=8))
        test_client = TestClient(create_app(tight), raise_server_exceptions=False)
        client = HttpScorerClient("http://testserver", http_client=test_client, retries=1)
        with pytest.raises(ContextWindowError) as err:
            client.score_target("a long context here", "and a target")
        assert err.value.window == 8
        assert err.value.target_tokens > 0

    def test_roundtrip_flag_on_wire(self, backend):
        result = backend.score("", "plain ascii", want_attention=False)
        assert result.target_roundtrip_ok is True


class TestConfig:
    def test_yaml_loading(self, tmp_path, checkpoint_dir):
        path = tmp_path / "sidecar.yaml"
        path.write_text(f"checkpoint: {checkpoint_dir}\nattention_layer: 0\n", encoding="utf-8")
        config = load_sidecar_config(path)
        assert config.attention_layer == 0
        backend = HFScorerBackend(config)
        assert "layer=0" in backend.info()["attention_layer_policy"]

    def test_bad_config_rejected(self, tmp_path):
        path = tmp_path / "bad.yaml"
        path.write_text("checkpoint: x\nhead_aggregation: median\n", encoding="utf-8")
        with pytest.raises(SidecarConfigError, match="head_aggregation"):
            load_sidecar_config(path)

    def test_layer_out_of_depth(self, checkpoint_dir):
        with pytest.raises(BackendRequestError, match="depth"):
            HFScorerBackend(SidecarConfig(checkpoint=str(checkpoint_dir), attention_layer=7))
