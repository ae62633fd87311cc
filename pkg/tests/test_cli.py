"""Command-line interface: every subcommand, exit codes, artifact layout."""

from __future__ import annotations

from pathlib import Path

import numpy as np
import pytest
import yaml

from promptda import load_task
from promptda.cli import main, resolve_out
from promptda.reports import read_metrics_csv, read_summary, read_sweep_csv


QUICK_CONFIG = {
    "data": {
        "kind": "synthetic",
        "synthetic": {
            "classes": 3,
            "dim": 8,
            "source_per_class": 6,
            "target_per_class": 8,
            "seed": 7,
        },
    },
    "encoder": {"embed_dim": 8, "seed": 3},
    "source": {"shots": 4, "epochs": 15, "lr": 0.05, "tau": 0.07, "batch_size": 8},
    "adaptation": {
        "bank_size": 3,
        "prompt_tokens": 4,
        "epochs": 2,
        "lr": 0.01,
        "tau": 0.07,
        "batch_size": 8,
        "seeds": [0],
    },
}


@pytest.fixture()
def quick_config(tmp_path):
    path = tmp_path / "exp.yaml"
    path.write_text(yaml.safe_dump(QUICK_CONFIG))
    return path


@pytest.fixture()
def staged_run(quick_config, tmp_path):
    """source-train -> build-bank -> adapt, returning all artifact paths."""
    source_dir = tmp_path / "stage_source"
    bank_dir = tmp_path / "stage_bank"
    adapt_dir = tmp_path / "stage_adapt"
    assert main(["source-train", "--config", str(quick_config), "--out", str(source_dir)]) == 0
    assert main([
        "build-bank", "--config", str(quick_config),
        "--source-checkpoint", str(source_dir / "source"),
        "--out", str(bank_dir),
    ]) == 0
    assert main([
        "adapt", "--config", str(quick_config),
        "--source-checkpoint", str(source_dir / "source"),
        "--bank", str(bank_dir / "bank.pt"),
        "--out", str(adapt_dir),
    ]) == 0
    return quick_config, source_dir, bank_dir, adapt_dir


def test_synth_gen_writes_task(tmp_path, capsys):
    out = tmp_path / "task"
    code = main([
        "synth-gen", "--out", str(out), "--classes", "3", "--dim", "8",
        "--source-per-class", "5", "--target-per-class", "6",
        "--confuser-fraction", "0.2", "--confuser-sigma", "0.05", "--seed", "1",
    ])
    assert code == 0
    task = load_task(out / "task.npz")
    assert task.spec.classes == 3
    assert task.spec.confuser_fraction == 0.2
    assert task.source_features.shape == (15, 8)
    printed = capsys.readouterr().out
    assert "task.npz" in printed


def test_source_train_writes_checkpoint(staged_run):
    _, source_dir, _, _ = staged_run
    assert (source_dir / "source" / "class_features.npy").exists()
    assert (source_dir / "source" / "class_tokens.npy").exists()
    manifest = yaml.safe_load((source_dir / "source" / "source_manifest.yaml").read_text())
    assert manifest["num_classes"] == 3
    assert manifest["frozen"] is True


def test_build_bank_writes_bank_and_selection(staged_run):
    _, _, bank_dir, _ = staged_run
    assert (bank_dir / "bank.pt").exists()
    selection = np.load(bank_dir / "high_confidence.npz", allow_pickle=False)
    assert selection["features"].shape[1] == 8
    assert selection["pseudo_labels"].shape == selection["confidences"].shape


def test_adapt_writes_checkpoints_and_reports(staged_run):
    _, _, _, adapt_dir = staged_run
    assert (adapt_dir / "seed_0" / "model.pt").exists()
    summary = read_summary(adapt_dir)
    assert "mean_accuracy" in summary
    metrics = read_metrics_csv(adapt_dir / "seed_0" / "metrics.csv")
    assert len(metrics) == 2


def test_evaluate_prints_accuracy(staged_run, capsys):
    quick_config, source_dir, bank_dir, adapt_dir = staged_run
    code = main([
        "evaluate", "--config", str(quick_config),
        "--source-checkpoint", str(source_dir / "source"),
        "--bank", str(bank_dir / "bank.pt"),
        "--checkpoint", str(adapt_dir / "seed_0" / "model.pt"),
    ])
    assert code == 0
    out = capsys.readouterr().out
    assert "accuracy" in out


def test_pipeline_end_to_end(quick_config, tmp_path, capsys):
    out = tmp_path / "pipe"
    assert main(["pipeline", "--config", str(quick_config), "--out", str(out)]) == 0
    summary = read_summary(out / "adaptation")
    assert "gain_over_source_only" in summary
    assert (out / "source" / "class_features.npy").exists()
    printed = capsys.readouterr().out
    assert "mean_accuracy" in printed or "accuracy" in printed


def test_sweep_writes_grid(quick_config, tmp_path):
    out = tmp_path / "sweep"
    code = main([
        "sweep", "--config", str(quick_config),
        "--parameter", "alpha_fuse", "--values", "0,1",
        "--out", str(out),
    ])
    assert code == 0
    rows = read_sweep_csv(out / "sweep_alpha_fuse.csv")
    assert [r["value"] for r in rows] == [0.0, 1.0]
    assert all("mean_accuracy" in r for r in rows)


def test_sweep_loss_combinations(quick_config, tmp_path):
    out = tmp_path / "sweep_loss"
    code = main([
        "sweep", "--config", str(quick_config),
        "--parameter", "loss", "--values", "ce,all",
        "--out", str(out),
    ])
    assert code == 0
    rows = read_sweep_csv(out / "sweep_loss.csv")
    assert [r["value"] for r in rows] == ["ce", "all"]


def test_report_prints_saved_run(staged_run, capsys):
    *_, adapt_dir = staged_run
    assert main(["report", "--run", str(adapt_dir)]) == 0
    out = capsys.readouterr().out
    assert "mean_accuracy" in out
    assert "epoch" in out


def test_adapt_rejects_mismatched_bank(staged_run, quick_config, tmp_path, capsys):
    _, source_dir, bank_dir, _ = staged_run
    # regenerate the source phase with a different encoder seed: the bank's
    # pinned source hash no longer matches
    other_cfg = dict(QUICK_CONFIG)
    other_cfg["encoder"] = {"embed_dim": 8, "seed": 99}
    other_path = tmp_path / "other.yaml"
    other_path.write_text(yaml.safe_dump(other_cfg))
    other_source = tmp_path / "other_source"
    assert main(["source-train", "--config", str(other_path), "--out", str(other_source)]) == 0
    code = main([
        "adapt", "--config", str(other_path),
        "--source-checkpoint", str(other_source / "source"),
        "--bank", str(bank_dir / "bank.pt"),
        "--out", str(tmp_path / "bad_adapt"),
    ])
    assert code == 1
    err = capsys.readouterr().err
    assert "different source" in err.lower()


def test_missing_config_exits_nonzero(tmp_path, capsys):
    code = main([
        "pipeline", "--config", str(tmp_path / "absent.yaml"),
        "--out", str(tmp_path / "x"),
    ])
    assert code == 1


def test_invalid_config_exits_nonzero(tmp_path, capsys):
    bad = tmp_path / "bad.yaml"
    bad.write_text(yaml.safe_dump({"adaptation": {"alpha_fuse": 7.0}}))
    code = main(["pipeline", "--config", str(bad), "--out", str(tmp_path / "x")])
    assert code == 1
    assert "alpha_fuse" in capsys.readouterr().err


def test_unknown_command_is_usage_error():
    with pytest.raises(SystemExit) as excinfo:
        main(["frobnicate"])
    assert excinfo.value.code == 2


def test_version_flag(capsys):
    with pytest.raises(SystemExit) as excinfo:
        main(["--version"])
    assert excinfo.value.code == 0
    assert "promptda" in capsys.readouterr().out


def test_checkpoint_root_env_redirects_relative_paths(monkeypatch, tmp_path):
    monkeypatch.setenv("PROMPTDA_CHECKPOINT_ROOT", str(tmp_path / "root"))
    resolved = resolve_out("runs/exp1")
    assert resolved == tmp_path / "root" / "runs" / "exp1"
    # absolute paths are left alone
    assert resolve_out(str(tmp_path / "abs")) == tmp_path / "abs"
    # without the env var, relative paths stay relative to the cwd
    monkeypatch.delenv("PROMPTDA_CHECKPOINT_ROOT")
    assert resolve_out("runs/exp1") == Path("runs/exp1")
