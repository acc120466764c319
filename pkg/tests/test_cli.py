"""CLI behavior: exit codes, overrides, help, report and mock-serve."""

from __future__ import annotations

import json
import socket
import threading
import time
from pathlib import Path

import pytest
import yaml
from click.testing import CliRunner

from world import build_world

from ddselect.cli import cli
from ddselect.config import load_config
from ddselect.manifest import Manifest


@pytest.fixture
def runner() -> CliRunner:
    return CliRunner()


@pytest.fixture
def world_files(tmp_path):
    world = build_world(30, seed=20, score_low=90)
    corpus = world.write_corpus(tmp_path / "corpus.jsonl")
    mock_cfg = world.write_mock_config(tmp_path / "mock.yaml")
    config = {
        "corpus_path": str(corpus),
        "backend_url": f"mock://{mock_cfg}",
        "output_dir": str(tmp_path / "out"),
        "cache_dir": str(tmp_path / "cache"),
        "band_high": 90.0,
        "k": 5,
        "concurrency": 2,
    }
    config_path = tmp_path / "config.yaml"
    config_path.write_text(yaml.safe_dump(config), encoding="utf-8")
    return tmp_path, config_path, world


class TestRunCommand:
    def test_valid_run_exits_zero_and_prints_manifest(self, runner, world_files):
        tmp_path, config_path, _ = world_files
        result = runner.invoke(cli, ["run", "--config", str(config_path)])
        assert result.exit_code == 0, result.output + str(result.stderr)
        assert "manifest:" in result.output
        assert result.stderr == ""
        manifest = Manifest.from_file(tmp_path / "out" / "manifest.json")
        assert manifest.counts.final == 5
        # Paper-default fields pass through to the manifest snapshot.
        assert manifest.config["delta"] == 90

    def test_missing_corpus_exits_two_with_path(self, runner, tmp_path):
        result = runner.invoke(
            cli, ["run", "--set", f"corpus_path={tmp_path}/absent.jsonl"]
        )
        assert result.exit_code == 2
        assert "absent.jsonl" in result.stderr

    def test_impossible_delta_exits_four(self, runner, world_files):
        _, config_path, _ = world_files
        result = runner.invoke(cli, ["run", "--config", str(config_path), "--set", "delta=101"])
        assert result.exit_code == 4

    def test_overrides_reflected_verbatim_in_manifest(self, runner, world_files):
        tmp_path, config_path, _ = world_files
        result = runner.invoke(
            cli,
            [
                "run",
                "--config",
                str(config_path),
                "--set",
                "delta=92",
                "--set",
                "k=3",
                "--set",
                "use_attention_bands=true",
                "--concurrency",
                "1",
            ],
        )
        assert result.exit_code == 0, result.stderr
        manifest = Manifest.from_file(tmp_path / "out" / "manifest.json")
        assert manifest.config["delta"] == 92
        assert manifest.config["k"] == 3
        assert manifest.config["use_attention_bands"] is True
        assert manifest.config["concurrency"] == 1

    def test_unknown_override_exits_two(self, runner, world_files):
        _, config_path, _ = world_files
        result = runner.invoke(cli, ["run", "--config", str(config_path), "--set", "no_such_field=1"])
        assert result.exit_code == 2
        assert "no_such_field" in result.stderr

    def test_help_lists_config_fields_with_defaults(self, runner):
        result = runner.invoke(cli, ["run", "--help"])
        assert result.exit_code == 0
        assert "delta = 90" in result.output
        assert "k = 5000" in result.output
        assert "band_low = 10.0" in result.output
        assert "band_high = 60.0" in result.output
        assert "DDS_BACKEND_URL" in result.output

    def test_default_delta_and_k_reach_manifest(self, runner, world_files):
        tmp_path, config_path, _ = world_files
        # Drop explicit k so the 5000-sample default applies (S_mid is
        # smaller, so the run truncates and warns but still succeeds).
        config = yaml.safe_load(config_path.read_text())
        del config["k"]
        config_path.write_text(yaml.safe_dump(config), encoding="utf-8")
        result = runner.invoke(cli, ["run", "--config", str(config_path)])
        assert result.exit_code == 0, result.stderr
        manifest = Manifest.from_file(tmp_path / "out" / "manifest.json")
        assert manifest.config["delta"] == 90
        assert manifest.config["k"] == 5000
        assert manifest.budget_truncated


class TestEnvOverride:
    def test_backend_url_from_environment(self):
        config = load_config(None, {}, env={"DDS_BACKEND_URL": "http://elsewhere:9000"})
        assert config.backend_url == "http://elsewhere:9000"

    def test_explicit_set_beats_environment(self):
        config = load_config(
            None, {"backend_url": "mock://x"}, env={"DDS_BACKEND_URL": "http://elsewhere:9000"}
        )
        assert config.backend_url == "mock://x"


class TestSweepCommand:
    def test_sweep_writes_summary(self, runner, world_files):
        tmp_path, config_path, _ = world_files
        result = runner.invoke(
            cli, ["sweep", "--config", str(config_path), "--sigma", "35", "--sigma", "50"]
        )
        assert result.exit_code == 0, result.stderr
        summary = (tmp_path / "out" / "sweep_summary.jsonl").read_text().splitlines()
        assert len(summary) == 2

    def test_empty_sigma_list_exits_two(self, runner, world_files):
        _, config_path, _ = world_files
        result = runner.invoke(cli, ["sweep", "--config", str(config_path)])
        assert result.exit_code == 2


class TestScoreCommand:
    def test_score_then_run(self, runner, world_files):
        tmp_path, config_path, _ = world_files
        assert runner.invoke(cli, ["score", "--config", str(config_path)]).exit_code == 0
        assert (tmp_path / "out" / "difficulties.jsonl").is_file()
        assert runner.invoke(cli, ["run", "--config", str(config_path)]).exit_code == 0


class TestReportCommand:
    def test_self_report_is_zero_delta(self, runner, tmp_path):
        rows = [{"id": f"s{i}", "d1": 1.0 + i, "d2": 2.0, "d3": 3.0} for i in range(10)]
        table = tmp_path / "t.jsonl"
        table.write_text("".join(json.dumps(r) + "\n" for r in rows), encoding="utf-8")
        result = runner.invoke(
            cli, ["report", str(table), str(table), "--output-dir", str(tmp_path / "rep")]
        )
        assert result.exit_code == 0, result.stderr
        report = json.loads((tmp_path / "rep" / "shift_report.json").read_text())
        assert all(m["mean_delta"] == 0.0 for m in report["metrics"].values())
        assert (tmp_path / "rep" / "plot_data.jsonl").is_file()

    def test_mismatched_tables_exit_two(self, runner, tmp_path):
        a = tmp_path / "a.jsonl"
        b = tmp_path / "b.jsonl"
        a.write_text(json.dumps({"id": "x", "d1": 1.0, "d2": 1.0, "d3": 1.0}) + "\n")
        b.write_text(json.dumps({"id": "y", "d1": 1.0, "d2": 1.0, "d3": 1.0}) + "\n")
        result = runner.invoke(cli, ["report", str(a), str(b)])
        assert result.exit_code == 2


class TestMockServe:
    def test_invalid_mock_config_exits_two(self, runner, tmp_path):
        bad = tmp_path / "bad.yaml"
        bad.write_text("probabilities: {a: 0.5, b: 0.4}\n", encoding="utf-8")
        result = runner.invoke(cli, ["mock-serve", "--mock-config", str(bad)])
        assert result.exit_code == 2

    def test_serves_protocol_over_real_socket(self, tmp_path):
        import uvicorn

        from ddselect.protocol.client import HttpScorerClient
        from ddselect.protocol.mock import MockBackend
        from ddselect.protocol.service import create_app

        world = build_world(3, seed=21)
        backend = MockBackend(world.mock_config)
        with socket.socket() as probe:
            probe.bind(("127.0.0.1", 0))
            port = probe.getsockname()[1]

        server = uvicorn.Server(
            uvicorn.Config(create_app(backend), host="127.0.0.1", port=port, log_level="error")
        )
        thread = threading.Thread(target=server.run, daemon=True)
        thread.start()
        try:
            client = HttpScorerClient(f"http://127.0.0.1:{port}", retries=20, backoff=0.05, timeout=5.0)
            deadline = time.time() + 10
            info = None
            while time.time() < deadline:
                try:
                    info = client.model_info()
                    break
                except Exception:
                    time.sleep(0.05)
            assert info is not None and info.model_id == "mock-unigram-v1"
            rec = client.score_target("", "a b", want_attention=True)
            assert len(rec.logprobs) == 2
        finally:
            server.should_exit = True
            thread.join(timeout=5)
