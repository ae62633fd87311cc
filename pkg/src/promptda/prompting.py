"""Few-shot prompt learning for class text features on a frozen dual encoder.

Only a small bank of learnable class tokens receives gradients; both
encoders stay frozen throughout. The product of this phase is the class
text-feature matrix: one unit-norm row per class, frozen and content-hashed
before any target-side training may start.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch
import yaml

from .config import SourceConfig
from .encoders import MockEncoderPair
from .errors import (
    ConfigInvalidError,
    DivergedLossError,
    EmptyClassError,
    NonFiniteLossError,
)
from .integrity import tensor_fingerprint
from .validation import (
    as_tensor,
    check_matrix,
    check_one_hot,
    check_prob_matrix,
    unit_normalize,
)

_LOG_EPS = 1e-12


def classify_zero_shot(
    image_features: torch.Tensor,
    class_features: "torch.Tensor | ClassTextFeatureMatrix",
    tau: float = 1.0,
    similarity: str = "cosine",
) -> torch.Tensor:
    """Class probabilities from image/text feature similarity.

    Scores are ``similarity(f_i, g_c) / tau`` pushed through a row softmax;
    ``cosine`` normalizes both sides first, ``dot`` uses raw inner products.
    """
    if isinstance(class_features, ClassTextFeatureMatrix):
        class_features = class_features.features
    if tau <= 0:
        raise ConfigInvalidError(f"tau must be positive, got {tau}")
    if similarity not in {"cosine", "dot"}:
        raise ConfigInvalidError(f"unknown similarity {similarity!r}")
    feats = check_matrix(as_tensor(image_features), "image_features")
    classes = check_matrix(as_tensor(class_features), "class_features")
    if feats.shape[1] != classes.shape[1]:
        raise ConfigInvalidError(
            f"feature width {feats.shape[1]} != class feature width {classes.shape[1]}"
        )
    if similarity == "cosine":
        feats = unit_normalize(feats, "image_features")
        classes = unit_normalize(classes, "class_features")
    logits = feats @ classes.T / tau
    return torch.softmax(logits, dim=1)


def cross_entropy_from_probs(
    probs: torch.Tensor, targets_one_hot: torch.Tensor
) -> torch.Tensor:
    """Mean cross-entropy between probability rows and one-hot targets."""
    probs = check_prob_matrix(as_tensor(probs), "probs")
    targets = check_one_hot(as_tensor(targets_one_hot), "targets_one_hot")
    if probs.shape != targets.shape:
        raise ConfigInvalidError(
            f"probs shape {tuple(probs.shape)} != targets shape {tuple(targets.shape)}"
        )
    return -(targets * torch.log(probs + _LOG_EPS)).sum(dim=1).mean()


def one_hot(labels: torch.Tensor | np.ndarray, num_classes: int) -> torch.Tensor:
    labels = as_tensor(labels, dtype=torch.long)
    if labels.ndim != 1:
        raise ConfigInvalidError("labels must be a 1-D integer array")
    if labels.numel() and (labels.min() < 0 or labels.max() >= num_classes):
        raise ConfigInvalidError(
            f"labels must lie in [0, {num_classes}), got "
            f"[{int(labels.min())}, {int(labels.max())}]"
        )
    return torch.nn.functional.one_hot(labels, num_classes).to(torch.get_default_dtype())


@dataclass
class ClassTextFeatureMatrix:
    """Per-class text features ``[C, D]`` with provenance and a content hash."""

    features: torch.Tensor
    class_names: tuple[str, ...]
    phase_tag: str  # {"source", "target"}
    frozen: bool = False

    def __post_init__(self) -> None:
        self.features = check_matrix(as_tensor(self.features), "class features")
        if len(self.class_names) != self.features.shape[0]:
            raise ConfigInvalidError(
                f"{len(self.class_names)} class names but "
                f"{self.features.shape[0]} feature rows"
            )
        if self.phase_tag not in {"source", "target"}:
            raise ConfigInvalidError(f"unknown phase_tag {self.phase_tag!r}")
        if self.frozen:
            self.features = self.features.detach()

    @property
    def num_classes(self) -> int:
        return self.features.shape[0]

    @property
    def embed_dim(self) -> int:
        return self.features.shape[1]

    def content_hash(self) -> str:
        return tensor_fingerprint(self.features)

    def freeze(self) -> "ClassTextFeatureMatrix":
        """Detached, frozen copy (idempotent)."""
        return ClassTextFeatureMatrix(
            features=self.features.detach().clone(),
            class_names=self.class_names,
            phase_tag=self.phase_tag,
            frozen=True,
        )


class LearnableClassTokens(torch.nn.Module):
    """One learnable token per class, appended to the fixed word prefix."""

    def __init__(
        self,
        num_classes: int,
        token_dim: int,
        prefix_tokens: torch.Tensor,
        class_name_tokens: torch.Tensor | None = None,
        init_std: float = 0.02,
        seed: int = 0,
    ) -> None:
        super().__init__()
        if num_classes < 1:
            raise ConfigInvalidError("num_classes must be >= 1")
        generator = torch.Generator().manual_seed(seed)
        init = torch.empty(num_classes, token_dim, dtype=prefix_tokens.dtype)
        init.normal_(mean=0.0, std=init_std, generator=generator)
        self.tokens = torch.nn.Parameter(init)
        self.register_buffer("prefix", prefix_tokens.detach().clone())
        if class_name_tokens is not None:
            if class_name_tokens.shape != (num_classes, token_dim):
                raise ConfigInvalidError(
                    "class_name_tokens must have shape "
                    f"[{num_classes}, {token_dim}], got {tuple(class_name_tokens.shape)}"
                )
            self.register_buffer("class_name_tokens", class_name_tokens.detach().clone())
        else:
            self.class_name_tokens = None

    def build_sequences(self) -> torch.Tensor:
        """Token sequences ``[C, L, D_token]``: prefix + learned (+ class word)."""
        c, _ = self.tokens.shape
        prefix = self.prefix.unsqueeze(0).expand(c, -1, -1)
        parts = [prefix, self.tokens.unsqueeze(1)]
        if self.class_name_tokens is not None:
            parts.append(self.class_name_tokens.unsqueeze(1))
        return torch.cat(parts, dim=1)


@dataclass(frozen=True)
class FewShotSourceSplit:
    """Deterministic few-shot labeled subset of the source domain."""

    sample_ids: tuple[str, ...]
    labels: tuple[int, ...]
    class_names: tuple[str, ...]
    shots: int
    seed: int

    @property
    def num_classes(self) -> int:
        return len(self.class_names)

    def per_class_counts(self) -> list[int]:
        counts = [0] * self.num_classes
        for label in self.labels:
            counts[label] += 1
        return counts


def make_few_shot_split(
    sample_ids: list[str],
    labels: np.ndarray | list[int],
    class_names: list[str],
    shots: int,
    seed: int = 0,
) -> FewShotSourceSplit:
    """Pick up to ``shots`` samples per class, seeded and order-independent.

    Ids are sorted before the seeded shuffle so the split depends only on the
    id set, not on input order. Classes with fewer than ``shots`` samples
    keep everything they have and trigger a warning; empty classes raise.
    """
    if shots < 1:
        raise ConfigInvalidError("shots must be >= 1")
    labels = np.asarray(labels, dtype=np.int64)
    if len(sample_ids) != len(labels):
        raise ConfigInvalidError(
            f"{len(sample_ids)} sample ids but {len(labels)} labels"
        )
    by_class: dict[int, list[str]] = {c: [] for c in range(len(class_names))}
    for sid, label in zip(sample_ids, labels.tolist()):
        if label not in by_class:
            raise ConfigInvalidError(f"label {label} out of range for {len(class_names)} classes")
        by_class[label].append(sid)

    rng = np.random.default_rng(seed)
    chosen_ids: list[str] = []
    chosen_labels: list[int] = []
    for c in range(len(class_names)):
        pool = sorted(by_class[c])
        if not pool:
            raise EmptyClassError(f"class {class_names[c]!r} has no source samples")
        if len(pool) < shots:
            warnings.warn(
                f"class {class_names[c]!r} has only {len(pool)} samples for "
                f"{shots}-shot training; keeping all of them",
                stacklevel=2,
            )
        order = rng.permutation(len(pool))
        take = [pool[i] for i in order[: min(shots, len(pool))]]
        chosen_ids.extend(take)
        chosen_labels.extend([c] * len(take))
    return FewShotSourceSplit(
        sample_ids=tuple(chosen_ids),
        labels=tuple(chosen_labels),
        class_names=tuple(class_names),
        shots=shots,
        seed=seed,
    )


@dataclass
class SourceTrainResult:
    """Artifacts of the source phase; ``class_features`` is the deliverable."""

    class_features: ClassTextFeatureMatrix
    tokens: torch.Tensor  # final learned class tokens, detached
    loss_history: list[float] = field(default_factory=list)
    initial_loss: float = float("nan")
    final_loss: float = float("nan")
    trained_parameters: dict[str, tuple[int, ...]] = field(default_factory=dict)
    encoder_checksum_before: str = ""
    encoder_checksum_after: str = ""


def hand_prompt_class_features(
    encoders: MockEncoderPair, class_names: list[str]
) -> ClassTextFeatureMatrix:
    """Untrained baseline: fixed word prefix plus each class's anchor token."""
    sequences = []
    for index, _ in enumerate(class_names):
        anchor = encoders.text.class_anchor_token(index)
        sequences.append(torch.cat([encoders.text.prefix_tokens, anchor.unsqueeze(0)]))
    features = encoders.text.encode_token_batch(torch.stack(sequences))
    return ClassTextFeatureMatrix(
        features=features.detach(),
        class_names=tuple(class_names),
        phase_tag="source",
        frozen=True,
    )


def encode_class_tokens(
    tokens: LearnableClassTokens, encoders: MockEncoderPair
) -> torch.Tensor:
    """Differentiable class text features ``[C, D]`` for the current tokens."""
    return encoders.text.encode_token_batch(tokens.build_sequences())


def train_source_prompts(
    split: FewShotSourceSplit,
    encoders: MockEncoderPair,
    config: SourceConfig,
    include_class_anchor: bool = True,
) -> SourceTrainResult:
    """Learn class tokens by cross-entropy on the few-shot source split.

    The optimizer sees exactly one parameter (the class-token bank); both
    encoders are frozen and their state is checksummed before and after so
    callers can verify nothing else moved.
    """
    config.validate()
    if min(split.per_class_counts()) < 1:
        raise EmptyClassError("every class needs at least one source sample")

    checksum_before = encoders.state_checksum()
    features = encoders.image.encode(list(split.sample_ids)).detach()
    targets = one_hot(np.asarray(split.labels), split.num_classes)

    anchor_tokens = None
    if include_class_anchor:
        anchor_tokens = torch.stack(
            [encoders.text.class_anchor_token(c) for c in range(split.num_classes)]
        )
    tokens = LearnableClassTokens(
        num_classes=split.num_classes,
        token_dim=encoders.text.token_dim,
        prefix_tokens=encoders.text.prefix_tokens,
        class_name_tokens=anchor_tokens,
        init_std=config.token_init_std,
        seed=config.seed,
    )
    optimizer = torch.optim.AdamW(
        [tokens.tokens], lr=config.lr, weight_decay=config.weight_decay
    )
    trained = {"class_tokens": tuple(tokens.tokens.shape)}

    def full_loss() -> float:
        with torch.no_grad():
            probs = classify_zero_shot(
                features, encode_class_tokens(tokens, encoders),
                tau=config.tau, similarity=config.similarity,
            )
            return float(cross_entropy_from_probs(probs, targets))

    initial_loss = full_loss()
    generator = torch.Generator().manual_seed(config.seed)
    history: list[float] = []
    n = len(split.sample_ids)
    for _ in range(config.epochs):
        order = torch.randperm(n, generator=generator)
        epoch_losses = []
        for start in range(0, n, config.batch_size):
            batch = order[start : start + config.batch_size]
            probs = classify_zero_shot(
                features[batch], encode_class_tokens(tokens, encoders),
                tau=config.tau, similarity=config.similarity,
            )
            loss = cross_entropy_from_probs(probs, targets[batch])
            if not torch.isfinite(loss):
                raise NonFiniteLossError("source training loss is not finite")
            optimizer.zero_grad()
            loss.backward()
            optimizer.step()
            epoch_losses.append(float(loss.detach()))
        epoch_mean = float(np.mean(epoch_losses))
        history.append(epoch_mean)
        if epoch_mean > max(10.0 * max(initial_loss, 1.0), 50.0):
            raise DivergedLossError(
                f"source loss {epoch_mean:.3f} exploded from {initial_loss:.3f}"
            )

    final_loss = full_loss()
    with torch.no_grad():
        final_features = encode_class_tokens(tokens, encoders).detach()
    matrix = ClassTextFeatureMatrix(
        features=final_features,
        class_names=split.class_names,
        phase_tag="source",
        frozen=True,
    )
    return SourceTrainResult(
        class_features=matrix,
        tokens=tokens.tokens.detach().clone(),
        loss_history=history,
        initial_loss=initial_loss,
        final_loss=final_loss,
        trained_parameters=trained,
        encoder_checksum_before=checksum_before,
        encoder_checksum_after=encoders.state_checksum(),
    )


def save_source_checkpoint(
    directory: str | Path,
    result: SourceTrainResult,
    split: FewShotSourceSplit,
    config: SourceConfig,
) -> Path:
    """Write class features, tokens, and a YAML manifest with the content hash."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    matrix = result.class_features
    np.save(directory / "class_features.npy", matrix.features.numpy())
    np.save(directory / "class_tokens.npy", result.tokens.numpy())
    manifest = {
        "phase": matrix.phase_tag,
        "frozen": True,
        "content_hash": matrix.content_hash(),
        "num_classes": matrix.num_classes,
        "embed_dim": matrix.embed_dim,
        "class_names": list(matrix.class_names),
        "shots": split.shots,
        "split_seed": split.seed,
        "per_class_counts": split.per_class_counts(),
        "tau": config.tau,
        "similarity": config.similarity,
        "epochs": config.epochs,
        "initial_loss": result.initial_loss,
        "final_loss": result.final_loss,
        "trained_parameters": {k: list(v) for k, v in result.trained_parameters.items()},
        "encoder_checksum": result.encoder_checksum_after,
    }
    (directory / "source_manifest.yaml").write_text(
        yaml.safe_dump(manifest, sort_keys=False)
    )
    return directory


def load_source_checkpoint(directory: str | Path) -> tuple[ClassTextFeatureMatrix, dict]:
    """Load a source checkpoint, verifying the stored content hash."""
    directory = Path(directory)
    manifest = yaml.safe_load((directory / "source_manifest.yaml").read_text())
    features = torch.from_numpy(np.load(directory / "class_features.npy"))
    matrix = ClassTextFeatureMatrix(
        features=features,
        class_names=tuple(manifest["class_names"]),
        phase_tag=manifest["phase"],
        frozen=True,
    )
    from .integrity import verify_fingerprint

    verify_fingerprint(manifest["content_hash"], features, what="class text features")
    return matrix, manifest
