"""Run reporting: metrics CSV files and aligned plain-text tables.

Every writer has a matching reader so artifacts round-trip; tests rely on
that to check reported numbers against in-memory results.
"""

from __future__ import annotations

import csv
import math
from pathlib import Path

import yaml

from .adaptation import AdaptationResult, EpochMetrics

METRIC_COLUMNS = (
    "epoch",
    "pseudo_ce",
    "consistency",
    "info_max",
    "total",
    "masked_fraction",
    "lr",
    "accuracy",
)


def write_metrics_csv(metrics: list[EpochMetrics], path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as handle:
        writer = csv.DictWriter(handle, fieldnames=METRIC_COLUMNS)
        writer.writeheader()
        for metric in metrics:
            writer.writerow({k: repr(v) for k, v in metric.as_row().items()})
    return path


def read_metrics_csv(path: str | Path) -> list[EpochMetrics]:
    rows = []
    with Path(path).open(newline="") as handle:
        for raw in csv.DictReader(handle):
            rows.append(
                EpochMetrics(
                    epoch=int(raw["epoch"]),
                    pseudo_ce=float(raw["pseudo_ce"]),
                    consistency=float(raw["consistency"]),
                    info_max=float(raw["info_max"]),
                    total=float(raw["total"]),
                    masked_fraction=float(raw["masked_fraction"]),
                    lr=float(raw["lr"]),
                    accuracy=float(raw["accuracy"]),
                )
            )
    return rows


def format_table(rows: list[dict], columns: list[str] | None = None) -> str:
    """Fixed-width text table; floats carry 4 decimals, NaN prints as '-'."""
    if not rows:
        return "(no rows)\n"
    columns = columns or list(rows[0].keys())

    def render(value) -> str:
        if isinstance(value, float):
            return "-" if math.isnan(value) else f"{value:.4f}"
        return str(value)

    rendered = [[render(row.get(col, "")) for col in columns] for row in rows]
    widths = [
        max(len(col), *(len(r[i]) for r in rendered)) for i, col in enumerate(columns)
    ]
    lines = [
        "  ".join(col.ljust(w) for col, w in zip(columns, widths)),
        "  ".join("-" * w for w in widths),
    ]
    lines.extend("  ".join(v.ljust(w) for v, w in zip(r, widths)) for r in rendered)
    return "\n".join(lines) + "\n"


def summarize_adaptation(result: AdaptationResult) -> dict:
    return {
        "seeds": [r.seed for r in result.seed_results],
        "accuracies": [r.final_accuracy for r in result.seed_results],
        "mean_accuracy": result.mean_accuracy,
        "std_accuracy": result.std_accuracy,
    }


def write_run_report(
    result: AdaptationResult,
    out_dir: str | Path,
    extra_summary: dict | None = None,
) -> Path:
    """Persist per-seed metric CSVs, a YAML summary, and a text report."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    for seed_result in result.seed_results:
        write_metrics_csv(
            seed_result.metrics, out_dir / f"seed_{seed_result.seed}" / "metrics.csv"
        )
    summary = summarize_adaptation(result)
    if extra_summary:
        summary.update(extra_summary)
    (out_dir / "summary.yaml").write_text(yaml.safe_dump(summary, sort_keys=False))

    rows = [
        {"seed": r.seed, "accuracy": r.final_accuracy, "best": r.best_accuracy}
        for r in result.seed_results
    ]
    rows.append(
        {"seed": "mean", "accuracy": result.mean_accuracy, "best": float("nan")}
    )
    (out_dir / "report.txt").write_text(format_table(rows))
    return out_dir


def read_summary(out_dir: str | Path) -> dict:
    return yaml.safe_load((Path(out_dir) / "summary.yaml").read_text())


def write_sweep_report(
    rows: list[dict], out_dir: str | Path, name: str = "sweep"
) -> Path:
    """One CSV plus one aligned text table for a parameter sweep."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    csv_path = out_dir / f"{name}.csv"
    if rows:
        columns = list(rows[0].keys())
        with csv_path.open("w", newline="") as handle:
            writer = csv.DictWriter(handle, fieldnames=columns)
            writer.writeheader()
            for row in rows:
                writer.writerow(
                    {k: repr(v) if isinstance(v, float) else v for k, v in row.items()}
                )
    else:
        csv_path.write_text("")
    (out_dir / f"{name}.txt").write_text(format_table(rows))
    return csv_path


def read_sweep_csv(path: str | Path) -> list[dict]:
    rows = []
    with Path(path).open(newline="") as handle:
        for raw in csv.DictReader(handle):
            parsed = {}
            for key, value in raw.items():
                try:
                    number = float(value)
                    parsed[key] = (
                        int(number) if number.is_integer() and "." not in value else number
                    )
                except ValueError:
                    parsed[key] = value
            rows.append(parsed)
    return rows
