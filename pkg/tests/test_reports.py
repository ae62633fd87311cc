"""CSV/YAML/text reporting round-trips."""

from __future__ import annotations

import math

import pytest

from promptda.adaptation import AdaptationResult, EpochMetrics, EvalReport, SeedRunResult
from promptda.reports import (
    METRIC_COLUMNS,
    format_table,
    read_metrics_csv,
    read_summary,
    read_sweep_csv,
    summarize_adaptation,
    write_metrics_csv,
    write_run_report,
    write_sweep_report,
)


def _metrics(n=3, accuracy=0.5):
    return [
        EpochMetrics(
            epoch=i,
            pseudo_ce=1.1 / (i + 1),
            consistency=0.3 * i,
            info_max=-0.2,
            total=1.1 / (i + 1) + 0.3 * i - 0.2,
            masked_fraction=0.25,
            lr=0.01 * (0.5 ** i),
            accuracy=accuracy + 0.01 * i,
        )
        for i in range(n)
    ]


def _seed_result(seed=0, accuracy=0.5):
    metrics = _metrics(accuracy=accuracy)
    return SeedRunResult(
        seed=seed,
        metrics=metrics,
        final_accuracy=metrics[-1].accuracy,
        best_accuracy=metrics[-1].accuracy,
        eval_report=EvalReport(metrics[-1].accuracy, {0: 1.0}, 24),
        trainable_registry={"W1": (8, 8), "T_t": (4, 8)},
        source_hash="abc123",
        integrity_checks=4,
        model=None,
    )


def test_metrics_csv_round_trip_is_exact(tmp_path):
    metrics = _metrics()
    path = tmp_path / "metrics.csv"
    write_metrics_csv(metrics, path)
    loaded = read_metrics_csv(path)
    assert loaded == metrics  # repr-precision floats survive the trip


def test_metrics_csv_header(tmp_path):
    path = tmp_path / "metrics.csv"
    write_metrics_csv(_metrics(), path)
    header = path.read_text().splitlines()[0]
    assert header.split(",") == list(METRIC_COLUMNS)


def test_format_table_renders_floats_and_nans():
    rows = [
        {"name": "a", "value": 0.123456, "extra": float("nan")},
        {"name": "bb", "value": 2.0, "extra": 1.0},
    ]
    text = format_table(rows)
    lines = text.splitlines()
    assert "0.1235" in lines[2]  # four decimals
    assert "-" in lines[2]  # NaN rendered as a dash
    # fixed-width: all lines align
    assert len({len(line) for line in lines}) == 1


def test_summarize_adaptation():
    result = AdaptationResult(
        seed_results=[_seed_result(0, 0.5), _seed_result(1, 0.6)],
        mean_accuracy=0.56,
        std_accuracy=0.05,
    )
    summary = summarize_adaptation(result)
    assert summary["mean_accuracy"] == 0.56
    assert summary["seeds"] == [0, 1]
    assert len(summary["accuracies"]) == 2


def test_write_run_report_structure(tmp_path):
    result = AdaptationResult(
        seed_results=[_seed_result(0, 0.5), _seed_result(1, 0.6)],
        mean_accuracy=0.56,
        std_accuracy=0.05,
    )
    out = tmp_path / "run"
    write_run_report(result, out, extra_summary={"gain_over_source_only": 0.2})
    assert (out / "seed_0" / "metrics.csv").exists()
    assert (out / "seed_1" / "metrics.csv").exists()
    assert (out / "report.txt").exists()
    summary = read_summary(out)
    assert summary["mean_accuracy"] == 0.56
    assert summary["gain_over_source_only"] == 0.2
    per_seed = read_metrics_csv(out / "seed_0" / "metrics.csv")
    assert [m.epoch for m in per_seed] == [0, 1, 2]
    report_text = (out / "report.txt").read_text()
    assert "mean" in report_text
    assert "0.5600" in report_text


def test_sweep_report_round_trip(tmp_path):
    rows = [
        {"parameter": "bank_size", "value": 1, "mean_accuracy": 0.61, "std_accuracy": 0.01},
        {"parameter": "bank_size", "value": 8, "mean_accuracy": 0.70, "std_accuracy": 0.02},
    ]
    out = tmp_path / "sweep"
    write_sweep_report(rows, out)
    loaded = read_sweep_csv(out / "sweep.csv")
    assert len(loaded) == 2
    assert loaded[0]["parameter"] == "bank_size"
    assert float(loaded[1]["mean_accuracy"]) == pytest.approx(0.70)
    table = (out / "sweep.txt").read_text()
    assert "bank_size" in table
