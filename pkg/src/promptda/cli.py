"""Command-line interface for the full workflow.

Subcommands mirror the pipeline stages: ``synth-gen`` makes a task,
``source-train`` learns and freezes class text features, ``build-bank``
pseudo-labels the target pool, ``adapt`` trains the dual-branch model,
``evaluate`` scores a checkpoint, ``pipeline`` chains everything, ``sweep``
grids one parameter, and ``report`` pretty-prints saved results.

Relative ``--out`` paths resolve under ``$PROMPTDA_CHECKPOINT_ROOT``
(default: the current directory). Any stage failure exits nonzero with the
error on stderr.
"""

from __future__ import annotations

import argparse
import os
import sys
from pathlib import Path

import numpy as np
import torch

from . import __version__
from .adaptation import evaluate_model, load_seed_checkpoint, run_adaptation
from .bank import load_bank, save_bank
from .config import ExperimentConfig, load_config, save_config
from .datasets import (
    SyntheticTaskSpec,
    generate_synthetic_task,
    nearest_anchor_accuracy,
    save_task,
)
from .errors import ConfigInvalidError, PromptDAError
from .pipeline import (
    LOSS_COMBINATIONS,
    build_target_bank,
    load_task_data,
    run_pipeline,
    run_source_phase,
    run_sweep,
)
from .prompting import load_source_checkpoint
from .reports import format_table, read_metrics_csv, read_summary, write_run_report

CHECKPOINT_ROOT_ENV = "PROMPTDA_CHECKPOINT_ROOT"


def resolve_out(path: str) -> Path:
    out = Path(path)
    if out.is_absolute():
        return out
    root = os.environ.get(CHECKPOINT_ROOT_ENV, ".")
    return Path(root) / out


def _load_experiment(path: str) -> ExperimentConfig:
    return load_config(path)


def _source_checkpoint_dir(path: str) -> Path:
    """Accept either a source-train output directory or its ``source/`` child."""
    directory = Path(path)
    nested = directory / "source"
    if not (directory / "source_manifest.yaml").exists() and (
        nested / "source_manifest.yaml"
    ).exists():
        return nested
    return directory


def _rebuild_encoders(config: ExperimentConfig, task):
    from .encoders import build_encoders

    encoders = build_encoders(config.encoder)
    encoders.image.register_samples(task.source_ids, task.source_features)
    encoders.image.register_samples(task.target_ids, task.target_features)
    return encoders


def cmd_synth_gen(args: argparse.Namespace) -> int:
    spec = SyntheticTaskSpec(
        classes=args.classes,
        dim=args.dim,
        source_per_class=args.source_per_class,
        target_per_class=args.target_per_class,
        rotation_deg=args.rotation_deg,
        translation=args.translation,
        noise_sigma=args.noise_sigma,
        label_noise=args.label_noise,
        confuser_fraction=args.confuser_fraction,
        confuser_sigma=args.confuser_sigma,
        seed=args.seed,
    )
    task = generate_synthetic_task(spec)
    out = resolve_out(args.out)
    path = save_task(task, out)
    src_acc = nearest_anchor_accuracy(
        task.source_features, task.source_labels, task.source_anchors
    )
    tgt_acc = nearest_anchor_accuracy(
        task.target_features, task.target_labels, task.source_anchors
    )
    print(f"task written to {path}")
    print(f"nearest-source-anchor accuracy  source={src_acc:.4f}  target={tgt_acc:.4f}")
    return 0


def cmd_source_train(args: argparse.Namespace) -> int:
    config = _load_experiment(args.config)
    out = resolve_out(args.out)
    task = load_task_data(config)
    artifacts = run_source_phase(config, task, out_dir=out)
    save_config(config, out / "config.yaml")
    print(f"source checkpoint written to {out / 'source'}")
    print(f"class-feature hash: {artifacts.class_features.content_hash()[:16]}...")
    print(
        f"source-only accuracy  source={artifacts.source_only_source_accuracy:.4f}"
        f"  target={artifacts.source_only_target_accuracy:.4f}"
    )
    return 0


def cmd_build_bank(args: argparse.Namespace) -> int:
    config = _load_experiment(args.config)
    matrix, _ = load_source_checkpoint(_source_checkpoint_dir(args.source_checkpoint))
    task = load_task_data(config)
    bank, high_conf = build_target_bank(task, matrix, config)
    out = resolve_out(args.out)
    out.mkdir(parents=True, exist_ok=True)
    save_bank(bank, out / "bank.pt")
    np.savez(
        out / "high_confidence.npz",
        sample_ids=np.array(high_conf.sample_ids),
        features=high_conf.features.numpy(),
        pseudo_labels=high_conf.pseudo_labels.numpy(),
        confidences=high_conf.confidences.numpy(),
    )
    print(f"bank written to {out / 'bank.pt'}")
    print(
        f"bank {bank.num_classes} classes x k={bank.k}, "
        f"counts={list(bank.counts)}, hash={bank.content_hash()[:16]}..."
    )
    return 0


def _load_high_confidence(path: Path):
    from .bank import HighConfidenceSet

    data = np.load(path, allow_pickle=False)
    return HighConfidenceSet(
        sample_ids=tuple(str(s) for s in data["sample_ids"]),
        features=torch.as_tensor(data["features"]),
        pseudo_labels=torch.as_tensor(data["pseudo_labels"], dtype=torch.long),
        confidences=torch.as_tensor(data["confidences"]),
    )


def cmd_adapt(args: argparse.Namespace) -> int:
    config = _load_experiment(args.config)
    matrix, _ = load_source_checkpoint(_source_checkpoint_dir(args.source_checkpoint))
    bank_dir = Path(args.bank)
    bank = load_bank(bank_dir / "bank.pt" if bank_dir.is_dir() else bank_dir)
    high_conf_path = (
        bank_dir / "high_confidence.npz"
        if bank_dir.is_dir()
        else bank_dir.parent / "high_confidence.npz"
    )
    high_conf = _load_high_confidence(high_conf_path)
    if bank.source_features_hash != matrix.content_hash():
        raise ConfigInvalidError(
            "bank was built from different source class features than the "
            "given checkpoint"
        )
    task = load_task_data(config)
    encoders = _rebuild_encoders(config, task)
    out = resolve_out(args.out)
    result = run_adaptation(
        source_features=matrix,
        bank=bank,
        high_conf=high_conf,
        target_features=np.asarray(task.target_features, dtype=np.float32),
        text_encoder=encoders.text,
        config=config.adaptation,
        eval_features=np.asarray(task.target_features, dtype=np.float32),
        eval_labels=task.target_labels,
        out_dir=out,
    )
    write_run_report(result, out)
    print(f"adaptation runs written to {out}")
    for run in result.seed_results:
        print(f"seed {run.seed}: accuracy={run.final_accuracy:.4f}")
    print(f"mean accuracy: {result.mean_accuracy:.4f} (+/- {result.std_accuracy:.4f})")
    return 0


def cmd_evaluate(args: argparse.Namespace) -> int:
    config = _load_experiment(args.config)
    matrix, _ = load_source_checkpoint(_source_checkpoint_dir(args.source_checkpoint))
    bank_path = Path(args.bank)
    bank = load_bank(bank_path / "bank.pt" if bank_path.is_dir() else bank_path)
    task = load_task_data(config)
    encoders = _rebuild_encoders(config, task)
    model = load_seed_checkpoint(
        Path(args.checkpoint), matrix, bank, encoders.text, config.adaptation
    )
    report = evaluate_model(
        model,
        np.asarray(task.target_features, dtype=np.float32),
        task.target_labels,
    )
    print(f"accuracy: {report.accuracy:.4f} on {report.num_samples} samples")
    rows = [
        {"class": c, "accuracy": acc}
        for c, acc in sorted(report.per_class_accuracy.items())
    ]
    print(format_table(rows), end="")
    return 0


def cmd_pipeline(args: argparse.Namespace) -> int:
    config = _load_experiment(args.config)
    out = resolve_out(args.out)
    result = run_pipeline(config, out_dir=out)
    print(f"pipeline artifacts written to {out}")
    print(f"source-only accuracy on target: {result.source_only_target_accuracy:.4f}")
    print(f"adapted mean accuracy:          {result.adaptation.mean_accuracy:.4f}")
    print(f"gain over source-only:          {result.gain_over_source_only:+.4f}")
    return 0


def _parse_sweep_values(parameter: str, raw: str) -> list:
    parts = [p.strip() for p in raw.split(",") if p.strip()]
    if parameter == "loss":
        return parts
    if parameter in {"alpha_fuse", "theta"}:
        return [float(p) for p in parts]
    return [int(p) for p in parts]


def cmd_sweep(args: argparse.Namespace) -> int:
    config = _load_experiment(args.config)
    values = _parse_sweep_values(args.parameter, args.values)
    out = resolve_out(args.out)
    rows = run_sweep(config, args.parameter, values, out_dir=out)
    print(format_table(rows), end="")
    print(f"sweep artifacts written to {out}")
    return 0


def cmd_report(args: argparse.Namespace) -> int:
    run_dir = Path(args.run)
    summary = read_summary(run_dir)
    print("summary:")
    for key, value in summary.items():
        print(f"  {key}: {value}")
    for seed_dir in sorted(run_dir.glob("seed_*")):
        metrics_path = seed_dir / "metrics.csv"
        if metrics_path.exists():
            metrics = read_metrics_csv(metrics_path)
            print(f"\n{seed_dir.name}:")
            print(format_table([m.as_row() for m in metrics]), end="")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="promptda",
        description=(
            "Few-shot source-free domain adaptation with prompt-learned class "
            "text features and a dual-branch target model."
        ),
    )
    parser.add_argument("--version", action="version", version=f"promptda {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth-gen", help="generate a two-domain synthetic task")
    p.add_argument("--out", required=True)
    p.add_argument("--classes", type=int, default=5)
    p.add_argument("--dim", type=int, default=32)
    p.add_argument("--source-per-class", type=int, default=20)
    p.add_argument("--target-per-class", type=int, default=40)
    p.add_argument("--rotation-deg", type=float, default=30.0)
    p.add_argument("--translation", type=float, default=0.5)
    p.add_argument("--noise-sigma", type=float, default=0.30)
    p.add_argument("--label-noise", type=float, default=0.0)
    p.add_argument("--confuser-fraction", type=float, default=0.0)
    p.add_argument("--confuser-sigma", type=float, default=0.1)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_synth_gen)

    p = sub.add_parser("source-train", help="learn and freeze class text features")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_source_train)

    p = sub.add_parser("build-bank", help="pseudo-label target pool, keep top-K")
    p.add_argument("--config", required=True)
    p.add_argument("--source-checkpoint", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_build_bank)

    p = sub.add_parser("adapt", help="train the dual-branch model on the target")
    p.add_argument("--config", required=True)
    p.add_argument("--source-checkpoint", required=True)
    p.add_argument("--bank", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_adapt)

    p = sub.add_parser("evaluate", help="score a saved adaptation checkpoint")
    p.add_argument("--config", required=True)
    p.add_argument("--source-checkpoint", required=True)
    p.add_argument("--bank", required=True)
    p.add_argument("--checkpoint", required=True)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("pipeline", help="source phase + bank + adaptation")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_pipeline)

    p = sub.add_parser("sweep", help="grid one parameter end to end")
    p.add_argument("--config", required=True)
    p.add_argument(
        "--parameter",
        required=True,
        choices=["alpha_fuse", "bank_size", "prompt_tokens", "theta", "shots", "loss"],
    )
    p.add_argument(
        "--values",
        required=True,
        help=(
            "comma-separated values; for --parameter loss use combination "
            f"names from {sorted(LOSS_COMBINATIONS)}"
        ),
    )
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("report", help="print a saved run's summary and metrics")
    p.add_argument("--run", required=True)
    p.set_defaults(func=cmd_report)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv if argv is not None else sys.argv[1:])
    try:
        return args.func(args)
    except PromptDAError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except FileNotFoundError as exc:
        print(f"error: missing file: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    raise SystemExit(main())
