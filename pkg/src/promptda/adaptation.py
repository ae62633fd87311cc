"""Unsupervised target adaptation loop over the dual-branch model.

Each seed trains a freshly initialized model against the same frozen source
class features and the same pre-built confidence bank. The source feature
buffer is fingerprint-checked every epoch, so silent drift of supposedly
frozen state fails loudly instead of biasing results.
"""

from __future__ import annotations

import copy
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from .bank import FeatureBank, HighConfidenceSet
from .config import AdaptationConfig
from .errors import (
    ConfigInvalidError,
    DivergedLossError,
    EmptyEvalSetError,
    NonFiniteLossError,
)
from .fusion import DualBranchModel
from .objectives import augment_strong, augment_weak, total_loss
from .prompting import ClassTextFeatureMatrix
from .validation import as_tensor, check_matrix


@dataclass
class EpochMetrics:
    """Mean per-batch losses of one epoch plus the evaluation snapshot."""

    epoch: int
    pseudo_ce: float
    consistency: float
    info_max: float
    total: float
    masked_fraction: float
    lr: float
    accuracy: float = float("nan")

    def as_row(self) -> dict[str, float]:
        return {
            "epoch": self.epoch,
            "pseudo_ce": self.pseudo_ce,
            "consistency": self.consistency,
            "info_max": self.info_max,
            "total": self.total,
            "masked_fraction": self.masked_fraction,
            "lr": self.lr,
            "accuracy": self.accuracy,
        }


@dataclass
class EvalReport:
    """Overall and per-class accuracy on a labeled evaluation set."""

    accuracy: float
    per_class_accuracy: dict[int, float]
    num_samples: int


@dataclass
class SeedRunResult:
    """One seed's trained model and its training/evaluation trace."""

    seed: int
    metrics: list[EpochMetrics]
    final_accuracy: float
    best_accuracy: float
    eval_report: EvalReport | None
    trainable_registry: dict[str, tuple[int, ...]]
    source_hash: str
    integrity_checks: int
    model: DualBranchModel = field(repr=False, default=None)
    checkpoint_path: Path | None = None


@dataclass
class AdaptationResult:
    """All seeds plus the accuracy summary used for reporting."""

    seed_results: list[SeedRunResult]
    mean_accuracy: float
    std_accuracy: float

    def accuracies(self) -> list[float]:
        return [r.final_accuracy for r in self.seed_results]


def evaluate_model(
    model: DualBranchModel,
    features: torch.Tensor | np.ndarray,
    labels: torch.Tensor | np.ndarray,
) -> EvalReport:
    """Accuracy of fused argmax predictions (ties take the lowest class)."""
    feats = check_matrix(as_tensor(features), "eval features")
    if feats.shape[0] == 0:
        raise EmptyEvalSetError("evaluation set is empty")
    label_arr = np.asarray(labels, dtype=np.int64)
    if label_arr.shape != (feats.shape[0],):
        raise ConfigInvalidError(
            f"labels shape {label_arr.shape} != ({feats.shape[0]},)"
        )
    probs = model.predict_probs(feats).numpy()
    preds = np.argmax(probs, axis=1)
    per_class: dict[int, float] = {}
    for c in range(model.num_classes):
        mask = label_arr == c
        if mask.any():
            per_class[c] = float(np.mean(preds[mask] == c))
    return EvalReport(
        accuracy=float(np.mean(preds == label_arr)),
        per_class_accuracy=per_class,
        num_samples=int(feats.shape[0]),
    )


def build_model(
    source_features: ClassTextFeatureMatrix,
    bank: FeatureBank,
    text_encoder,
    config: AdaptationConfig,
    seed: int,
) -> DualBranchModel:
    return DualBranchModel(
        source_features=source_features,
        bank_tensor=bank.tensor,
        text_encoder=text_encoder,
        prompt_tokens=config.prompt_tokens,
        attention_dim=config.attention_dim,
        attention_scope=config.attention_scope,
        gate_mode=config.gate_mode,
        bank_trainable=config.bank_trainable,
        alpha_fuse=config.alpha_fuse,
        tau=config.tau,
        similarity=config.similarity,
        token_init_std=config.token_init_std,
        seed=seed,
    )


def _make_optimizer(model: DualBranchModel, config: AdaptationConfig):
    params = [p for p in model.parameters() if p.requires_grad]
    betas = (config.momentum_beta, 0.999)
    if config.decoupled_weight_decay:
        return torch.optim.AdamW(
            params, lr=config.lr, betas=betas, weight_decay=config.weight_decay
        )
    return torch.optim.Adam(
        params, lr=config.lr, betas=betas, weight_decay=config.weight_decay
    )


def adapt_single_seed(
    source_features: ClassTextFeatureMatrix,
    bank: FeatureBank,
    high_conf: HighConfidenceSet,
    target_features: torch.Tensor | np.ndarray,
    text_encoder,
    config: AdaptationConfig,
    seed: int,
    eval_features: torch.Tensor | np.ndarray | None = None,
    eval_labels: torch.Tensor | np.ndarray | None = None,
    out_dir: str | Path | None = None,
) -> SeedRunResult:
    """Train one dual-branch model on unlabeled target features.

    ``high_conf`` feeds the pseudo-label CE term; the full unlabeled pool
    feeds the consistency and diversity terms through weak/strong views.
    On a non-finite loss the model is rolled back to the last finished epoch
    (and, if ``out_dir`` is set, that state is saved) before raising.
    """
    config.validate()
    if config.selection == "best_eval" and eval_features is None:
        raise ConfigInvalidError("selection='best_eval' needs an evaluation set")
    unlabeled = check_matrix(as_tensor(target_features), "target features")
    if unlabeled.shape[0] == 0:
        raise ConfigInvalidError("target feature pool is empty")

    model = build_model(source_features, bank, text_encoder, config, seed)
    model.verify_source_integrity()
    registry = model.trainable_registry()
    optimizer = _make_optimizer(model, config)
    n_unlabeled = unlabeled.shape[0]
    batches_per_epoch = max(1, math.ceil(n_unlabeled / config.batch_size))
    total_steps = max(1, config.epochs * batches_per_epoch)
    scheduler = torch.optim.lr_scheduler.CosineAnnealingLR(
        optimizer, T_max=total_steps, eta_min=0.0
    )

    order_gen = torch.Generator().manual_seed(seed)
    aug_gen = torch.Generator().manual_seed(seed + 101)
    ce_features = high_conf.features.to(unlabeled.dtype)
    ce_labels = high_conf.pseudo_labels
    n_ce = ce_features.shape[0]

    def snapshot() -> dict:
        return copy.deepcopy(model.state_dict())

    def run_eval() -> float:
        if eval_features is None or eval_labels is None:
            return float("nan")
        return evaluate_model(model, eval_features, eval_labels).accuracy

    metrics: list[EpochMetrics] = []
    integrity_checks = 0
    last_good = snapshot()
    best_state, best_accuracy = last_good, -1.0
    ce_cursor = 0
    ce_order = torch.randperm(n_ce, generator=order_gen)

    for epoch in range(config.epochs):
        order = torch.randperm(n_unlabeled, generator=order_gen)
        sums = {"pseudo_ce": 0.0, "consistency": 0.0, "info_max": 0.0,
                "total": 0.0, "masked_fraction": 0.0}
        batches = 0
        try:
            for start in range(0, n_unlabeled, config.batch_size):
                batch = unlabeled[order[start : start + config.batch_size]]
                weak = augment_weak(batch, config.weak_noise_sigma, aug_gen)
                strong = augment_strong(
                    batch, config.strong_noise_sigma, config.strong_dropout, aug_gen
                )
                weak_pred = model(weak)
                strong_pred = model(strong) if config.use_consistency else None

                ce_probs, ce_batch_labels = None, None
                if config.use_pseudo_ce:
                    take = min(config.batch_size, n_ce)
                    if ce_cursor + take > n_ce:
                        ce_order = torch.randperm(n_ce, generator=order_gen)
                        ce_cursor = 0
                    idx = ce_order[ce_cursor : ce_cursor + take]
                    ce_cursor += take
                    ce_view = augment_weak(
                        ce_features[idx], config.weak_noise_sigma, aug_gen
                    )
                    ce_probs = model(ce_view).probs
                    ce_batch_labels = ce_labels[idx]

                breakdown = total_loss(
                    ce_probs=ce_probs,
                    pseudo_labels=ce_batch_labels,
                    weak_probs=weak_pred.probs if config.use_consistency else None,
                    strong_probs=strong_pred.probs if strong_pred is not None else None,
                    im_probs=weak_pred.probs if config.use_info_max else None,
                    theta=config.theta,
                    use_pseudo_ce=config.use_pseudo_ce,
                    use_consistency=config.use_consistency,
                    use_info_max=config.use_info_max,
                )
                total_value = float(breakdown.total.detach())
                if total_value > config.divergence_threshold:
                    raise DivergedLossError(
                        f"target objective {total_value:.3e} exceeded "
                        f"divergence threshold {config.divergence_threshold:.3e}"
                    )
                optimizer.zero_grad()
                breakdown.total.backward()
                optimizer.step()
                scheduler.step()
                for key, value in breakdown.as_floats().items():
                    if key in sums:
                        sums[key] += value
                batches += 1
        except NonFiniteLossError:
            model.load_state_dict(last_good)
            if out_dir is not None:
                _save_seed_checkpoint(model, Path(out_dir), seed, suffix="last_good")
            raise

        model.verify_source_integrity()
        integrity_checks += 1
        accuracy = run_eval()
        metrics.append(
            EpochMetrics(
                epoch=epoch,
                pseudo_ce=sums["pseudo_ce"] / batches,
                consistency=sums["consistency"] / batches,
                info_max=sums["info_max"] / batches,
                total=sums["total"] / batches,
                masked_fraction=sums["masked_fraction"] / batches,
                lr=float(optimizer.param_groups[0]["lr"]),
                accuracy=accuracy,
            )
        )
        last_good = snapshot()
        if not math.isnan(accuracy) and accuracy > best_accuracy:
            best_accuracy, best_state = accuracy, snapshot()

    if config.selection == "best_eval" and best_accuracy >= 0:
        model.load_state_dict(best_state)
    model.verify_source_integrity()
    integrity_checks += 1

    eval_report = None
    final_accuracy = float("nan")
    if eval_features is not None and eval_labels is not None:
        eval_report = evaluate_model(model, eval_features, eval_labels)
        final_accuracy = eval_report.accuracy

    checkpoint_path = None
    if out_dir is not None:
        checkpoint_path = _save_seed_checkpoint(model, Path(out_dir), seed)

    return SeedRunResult(
        seed=seed,
        metrics=metrics,
        final_accuracy=final_accuracy,
        best_accuracy=best_accuracy if best_accuracy >= 0 else float("nan"),
        eval_report=eval_report,
        trainable_registry=registry,
        source_hash=model.source_hash,
        integrity_checks=integrity_checks,
        model=model,
        checkpoint_path=checkpoint_path,
    )


def _save_seed_checkpoint(
    model: DualBranchModel, out_dir: Path, seed: int, suffix: str = "model"
) -> Path:
    seed_dir = out_dir / f"seed_{seed}"
    seed_dir.mkdir(parents=True, exist_ok=True)
    path = seed_dir / f"{suffix}.pt"
    torch.save(model.checkpoint_payload(), path)
    return path


def load_seed_checkpoint(
    path: str | Path,
    source_features: ClassTextFeatureMatrix,
    bank: FeatureBank,
    text_encoder,
    config: AdaptationConfig,
    seed: int = 0,
) -> DualBranchModel:
    """Rebuild a model skeleton and load a saved checkpoint into it."""
    payload = torch.load(Path(path), weights_only=False)
    model = build_model(source_features, bank, text_encoder, config, seed)
    model.load_checkpoint_payload(payload)
    return model


def run_adaptation(
    source_features: ClassTextFeatureMatrix,
    bank: FeatureBank,
    high_conf: HighConfidenceSet,
    target_features: torch.Tensor | np.ndarray,
    text_encoder,
    config: AdaptationConfig,
    eval_features: torch.Tensor | np.ndarray | None = None,
    eval_labels: torch.Tensor | np.ndarray | None = None,
    out_dir: str | Path | None = None,
) -> AdaptationResult:
    """Train one model per configured seed and summarize accuracies."""
    config.validate()
    results = [
        adapt_single_seed(
            source_features,
            bank,
            high_conf,
            target_features,
            text_encoder,
            config,
            seed,
            eval_features=eval_features,
            eval_labels=eval_labels,
            out_dir=out_dir,
        )
        for seed in config.seeds
    ]
    accuracies = [r.final_accuracy for r in results]
    finite = [a for a in accuracies if not math.isnan(a)]
    mean = float(np.mean(finite)) if finite else float("nan")
    std = float(np.std(finite)) if finite else float("nan")
    return AdaptationResult(seed_results=results, mean_accuracy=mean, std_accuracy=std)
