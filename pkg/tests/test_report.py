"""Snapshot summaries and before/after difficulty shift reports."""

from __future__ import annotations

import json
import math
import random

import pytest

from oracles import oracle_nearest_rank, oracle_ppl_from_probs

from ddselect.difficulty import DifficultyVector
from ddselect.report import (
    DifficultySnapshot,
    ReportError,
    domain_shift,
    summarize,
    write_plot_data,
    write_shift_report,
)
from ddselect.selection import percentile_thresholds


def vec(d1: float, d2: float = 1.5, d3: float = 1.5) -> DifficultyVector:
    return DifficultyVector(
        d1=d1, d2=d2, d3=d3, atten_d2=None, atten_d3=None, aggregation="none", generated_response=""
    )


def snapshot(values: dict[str, DifficultyVector], model_id: str = "m") -> DifficultySnapshot:
    return DifficultySnapshot(model_id=model_id, vectors=values)


class TestSummarize:
    def test_single_sample_constant_stats(self):
        stats = summarize(snapshot({"a": vec(2.0)}))
        assert stats["d1"] == {"min": 2.0, "p25": 2.0, "median": 2.0, "p75": 2.0, "max": 2.0, "mean": 2.0}

    def test_median_of_one_to_five(self):
        values = {f"s{i}": vec(float(i)) for i in range(1, 6)}
        assert summarize(snapshot(values))["d1"]["median"] == 3.0

    def test_500_samples_match_stats_oracle(self):
        rng = random.Random(31)
        values = {
            f"s{i}": vec(rng.uniform(1, 9), rng.uniform(1, 9), rng.uniform(1, 9)) for i in range(500)
        }
        stats = summarize(snapshot(values))
        for metric in ("d1", "d2", "d3"):
            column = [getattr(v, metric) for v in values.values()]
            assert stats[metric]["min"] == min(column)
            assert stats[metric]["max"] == max(column)
            assert stats[metric]["mean"] == pytest.approx(math.fsum(column) / len(column), rel=1e-12)
            assert stats[metric]["p25"] == oracle_nearest_rank(column, 25)
            assert stats[metric]["median"] == oracle_nearest_rank(column, 50)
            assert stats[metric]["p75"] == oracle_nearest_rank(column, 75)

    def test_quantiles_agree_with_selection_percentiles(self):
        rng = random.Random(5)
        values = {f"s{i}": vec(rng.uniform(1, 4)) for i in range(77)}
        stats = summarize(snapshot(values))
        column = [v.d1 for v in values.values()]
        assert (stats["d1"]["p25"], stats["d1"]["p75"]) == percentile_thresholds(column, 25, 75)

    def test_empty_snapshot_rejected(self):
        with pytest.raises(ReportError):
            DifficultySnapshot(model_id="m", vectors={})


class TestDomainShift:
    def test_identical_snapshots_zero_report(self):
        rng = random.Random(8)
        values = {f"s{i}": vec(rng.uniform(1, 5), rng.uniform(1, 5), rng.uniform(1, 5)) for i in range(40)}
        report = domain_shift(snapshot(values, "m1"), snapshot(values, "m1"))
        for metric in ("d1", "d2", "d3"):
            m = report.metrics[metric]
            assert m.mean_delta == 0.0
            assert m.median_delta == 0.0
            assert m.frac_decreased == 0.0
            assert m.iqr_before == m.iqr_after

    def test_halved_d1(self):
        rng = random.Random(9)
        before = {f"s{i}": vec(rng.uniform(2, 6)) for i in range(25)}
        after = {k: vec(v.d1 / 2, v.d2, v.d3) for k, v in before.items()}
        report = domain_shift(snapshot(before), snapshot(after))
        assert report.metrics["d1"].mean_delta < 0
        assert report.metrics["d1"].frac_decreased == 1.0

    def test_mean_deltas_antisymmetric_exactly(self):
        rng = random.Random(10)
        before = {f"s{i}": vec(rng.uniform(1, 5), rng.uniform(1, 5), rng.uniform(1, 5)) for i in range(60)}
        after = {k: vec(rng.uniform(1, 5), rng.uniform(1, 5), rng.uniform(1, 5)) for k in before}
        forward = domain_shift(snapshot(before), snapshot(after))
        backward = domain_shift(snapshot(after), snapshot(before))
        for metric in ("d1", "d2", "d3"):
            assert forward.metrics[metric].mean_delta == -backward.metrics[metric].mean_delta
            assert forward.metrics[metric].iqr_before == backward.metrics[metric].iqr_after

    def test_id_mismatch_lists_difference(self):
        a = snapshot({"x": vec(2.0), "y": vec(2.0)})
        b = snapshot({"x": vec(2.0), "z": vec(2.0)})
        with pytest.raises(ReportError, match="'y'") as err:
            domain_shift(a, b)
        assert "'z'" in str(err.value)

    def test_simulated_fine_tune_shifts_d3_down(self):
        # Instructions draw on {a,b,c,d}, responses on {e,f,g,h}.  The
        # "after" model moves probability mass onto the response tokens, so
        # every d3 strictly decreases while d1 strictly increases.
        before_probs = {"a": 0.3, "b": 0.2, "c": 0.15, "d": 0.1, "e": 0.08, "f": 0.07, "g": 0.06, "h": 0.04}
        after_probs = {"a": 0.1, "b": 0.08, "c": 0.07, "d": 0.05, "e": 0.2, "f": 0.18, "g": 0.17, "h": 0.15}
        rng = random.Random(11)
        samples = []
        for i in range(50):
            instruction = " ".join(rng.choice("abcd") for _ in range(rng.randint(2, 6)))
            response = " ".join(rng.choice("efgh") for _ in range(rng.randint(2, 6)))
            samples.append((f"s{i}", instruction, response))

        def snap(probs: dict[str, float], model_id: str) -> DifficultySnapshot:
            vectors = {
                sid: vec(
                    oracle_ppl_from_probs([probs[t] for t in instruction.split()]),
                    1.5,
                    oracle_ppl_from_probs([probs[t] for t in response.split()]),
                )
                for sid, instruction, response in samples
            }
            return DifficultySnapshot(model_id=model_id, vectors=vectors)

        before, after = snap(before_probs, "base"), snap(after_probs, "tuned")
        report = domain_shift(before, after)
        assert report.metrics["d3"].median_delta < 0
        assert report.metrics["d3"].frac_decreased == 1.0
        assert report.metrics["d1"].frac_decreased == 0.0

        deltas = [
            oracle_ppl_from_probs([after_probs[t] for t in response.split()])
            - oracle_ppl_from_probs([before_probs[t] for t in response.split()])
            for _, _, response in samples
        ]
        assert report.metrics["d3"].median_delta == oracle_nearest_rank(deltas, 50)
        assert report.metrics["d3"].mean_delta == pytest.approx(math.fsum(deltas) / len(deltas), rel=1e-12)


class TestFilesAndLoading:
    def test_table_round_trip_and_report_files(self, tmp_path):
        rng = random.Random(12)
        rows = [
            {"id": f"s{i}", "d1": rng.uniform(1, 3), "d2": rng.uniform(1, 3), "d3": rng.uniform(1, 3),
             "atten_d2": None, "atten_d3": None}
            for i in range(20)
        ]
        table = tmp_path / "difficulties.jsonl"
        table.write_text("".join(json.dumps(r) + "\n" for r in rows), encoding="utf-8")
        snap = DifficultySnapshot.from_table_file(table, model_id="m")
        assert len(snap.vectors) == 20
        assert snap.vectors["s3"].d1 == rows[3]["d1"]

        report = domain_shift(snap, snap)
        report_path = tmp_path / "shift.json"
        write_shift_report(report, report_path)
        loaded = json.loads(report_path.read_text())
        assert loaded["sample_count"] == 20
        assert loaded["metrics"]["d1"]["mean_delta"] == 0.0

        plot_path = tmp_path / "plot.jsonl"
        write_plot_data([("before", snap), ("after", snap)], plot_path)
        lines = [json.loads(l) for l in plot_path.read_text().splitlines()]
        assert len(lines) == 40
        assert {l["snapshot"] for l in lines} == {"before", "after"}
        assert set(lines[0]) == {"id", "d1", "d2", "d3", "snapshot"}

    def test_missing_table(self, tmp_path):
        with pytest.raises(ReportError, match="not found"):
            DifficultySnapshot.from_table_file(tmp_path / "nope.jsonl")
