"""Pseudo-labeling and the per-class high-confidence feature bank.

Unlabeled target samples are scored against the frozen class text features;
the top-K most confident samples of every pseudo-class populate a
``[C, K, D]`` feature bank that seeds the cross-attention branch. Ties are
broken deterministically (argmax picks the lowest class index, selection
keeps input order among equal confidences).
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
import torch

from .errors import ConfigInvalidError, EmptyClassError, EmptyRecordListError
from .integrity import tensor_fingerprint
from .prompting import ClassTextFeatureMatrix, classify_zero_shot
from .validation import as_tensor, check_matrix


@dataclass(frozen=True)
class PseudoLabelRecord:
    """One unlabeled sample's predicted class and confidence."""

    sample_id: str
    pseudo_label: int
    confidence: float
    feature: torch.Tensor

    def __post_init__(self) -> None:
        if not 0.0 <= self.confidence <= 1.0 + 1e-9:
            raise ConfigInvalidError(
                f"confidence must lie in [0, 1], got {self.confidence}"
            )


def assign_pseudo_labels(
    sample_ids: list[str],
    features: torch.Tensor | np.ndarray,
    class_features: torch.Tensor | ClassTextFeatureMatrix,
    tau: float = 1.0,
    similarity: str = "cosine",
) -> list[PseudoLabelRecord]:
    """Pseudo-label every sample with its most probable class.

    The argmax takes the lowest class index on exact ties, so record order
    and labels are reproducible bit-for-bit.
    """
    feats = check_matrix(as_tensor(features), "features")
    if len(sample_ids) != feats.shape[0]:
        raise ConfigInvalidError(
            f"{len(sample_ids)} sample ids but {feats.shape[0]} feature rows"
        )
    if feats.shape[0] == 0:
        raise EmptyRecordListError("no samples to pseudo-label")
    probs = classify_zero_shot(feats, class_features, tau=tau, similarity=similarity)
    probs_np = probs.detach().numpy()
    labels = np.argmax(probs_np, axis=1)  # first maximum wins
    confidences = probs_np[np.arange(len(labels)), labels]
    return [
        PseudoLabelRecord(
            sample_id=sid,
            pseudo_label=int(label),
            confidence=float(conf),
            feature=feats[i].detach().clone(),
        )
        for i, (sid, label, conf) in enumerate(zip(sample_ids, labels, confidences))
    ]


def select_top_k(
    records: list[PseudoLabelRecord], num_classes: int, k: int
) -> dict[int, list[PseudoLabelRecord]]:
    """Top-``k`` records per pseudo-class by confidence, stably ordered.

    Classes holding fewer than ``k`` records keep everything and trigger a
    saturation warning; a class with no records at all raises, because the
    bank would have no feature to represent it.
    """
    if k < 1:
        raise ConfigInvalidError("k must be >= 1")
    if not records:
        raise EmptyRecordListError("cannot select from an empty record list")
    per_class: dict[int, list[PseudoLabelRecord]] = {c: [] for c in range(num_classes)}
    for record in records:
        if not 0 <= record.pseudo_label < num_classes:
            raise ConfigInvalidError(
                f"pseudo label {record.pseudo_label} out of range "
                f"for {num_classes} classes"
            )
        per_class[record.pseudo_label].append(record)

    selected: dict[int, list[PseudoLabelRecord]] = {}
    starved = []
    for c in range(num_classes):
        pool = per_class[c]
        if not pool:
            raise EmptyClassError(
                f"class {c} received no pseudo-labeled samples; "
                "cannot build its bank slice"
            )
        confidences = np.array([r.confidence for r in pool])
        order = np.argsort(-confidences, kind="stable")  # ties keep input order
        selected[c] = [pool[i] for i in order[: min(k, len(pool))]]
        if len(pool) < k:
            starved.append((c, len(pool)))
    if starved:
        detail = ", ".join(f"class {c}: {n}" for c, n in starved)
        warnings.warn(
            f"bank saturation: fewer than k={k} pseudo-labeled samples for "
            f"{detail}; keeping all available entries",
            stacklevel=2,
        )
    return selected


@dataclass(frozen=True)
class HighConfidenceSet:
    """The pseudo-labeled subset used by the target cross-entropy term."""

    sample_ids: tuple[str, ...]
    features: torch.Tensor  # [N, D]
    pseudo_labels: torch.Tensor  # [N] long
    confidences: torch.Tensor  # [N]

    def __len__(self) -> int:
        return len(self.sample_ids)


def flatten_selection(
    selection: dict[int, list[PseudoLabelRecord]]
) -> HighConfidenceSet:
    """Class-major, confidence-descending flattening of a top-K selection."""
    ids: list[str] = []
    feats: list[torch.Tensor] = []
    labels: list[int] = []
    confs: list[float] = []
    for c in sorted(selection):
        for record in selection[c]:
            ids.append(record.sample_id)
            feats.append(record.feature)
            labels.append(record.pseudo_label)
            confs.append(record.confidence)
    if not ids:
        raise EmptyRecordListError("selection holds no records")
    return HighConfidenceSet(
        sample_ids=tuple(ids),
        features=torch.stack(feats),
        pseudo_labels=torch.tensor(labels, dtype=torch.long),
        confidences=torch.tensor(confs, dtype=feats[0].dtype),
    )


@dataclass
class FeatureBank:
    """Per-class target feature bank ``[C, K, D]`` plus its provenance."""

    tensor: torch.Tensor
    class_names: tuple[str, ...]
    counts: tuple[int, ...]  # genuine (unpadded) entries per class
    sample_ids: tuple[tuple[str, ...], ...]
    source_features_hash: str

    def __post_init__(self) -> None:
        if self.tensor.ndim != 3:
            raise ConfigInvalidError(
                f"bank tensor must be [C, K, D], got {tuple(self.tensor.shape)}"
            )
        c = self.tensor.shape[0]
        if not (len(self.class_names) == len(self.counts) == len(self.sample_ids) == c):
            raise ConfigInvalidError("bank metadata length mismatch")

    @property
    def num_classes(self) -> int:
        return self.tensor.shape[0]

    @property
    def k(self) -> int:
        return self.tensor.shape[1]

    def content_hash(self) -> str:
        return tensor_fingerprint(self.tensor)

    def manifest(self) -> dict:
        return {
            "num_classes": self.num_classes,
            "k": self.k,
            "embed_dim": int(self.tensor.shape[2]),
            "counts": list(self.counts),
            "padded": [self.k - n for n in self.counts],
            "content_hash": self.content_hash(),
            "source_features_hash": self.source_features_hash,
            "sample_ids": [list(ids) for ids in self.sample_ids],
        }


def build_feature_bank(
    selection: dict[int, list[PseudoLabelRecord]],
    class_names: tuple[str, ...] | list[str],
    k: int,
    source_features_hash: str = "",
) -> FeatureBank:
    """Stack a top-K selection into a dense ``[C, K, D]`` bank.

    Starved classes are padded to ``k`` rows by repeating their least
    confident kept entry, so downstream shapes stay rectangular; the
    genuine count per class is preserved in the manifest.
    """
    num_classes = len(class_names)
    if set(selection) != set(range(num_classes)):
        raise ConfigInvalidError(
            f"selection classes {sorted(selection)} != expected "
            f"{list(range(num_classes))}"
        )
    slices: list[torch.Tensor] = []
    counts: list[int] = []
    ids: list[tuple[str, ...]] = []
    for c in range(num_classes):
        pool = selection[c]
        if not pool:
            raise EmptyClassError(f"class {c} has an empty bank slice")
        rows = [r.feature for r in pool[:k]]
        row_ids = [r.sample_id for r in pool[:k]]
        counts.append(len(rows))
        while len(rows) < k:
            rows.append(rows[-1].clone())
            row_ids.append(row_ids[-1])
        slices.append(torch.stack(rows))
        ids.append(tuple(row_ids))
    return FeatureBank(
        tensor=torch.stack(slices),
        class_names=tuple(class_names),
        counts=tuple(counts),
        sample_ids=tuple(ids),
        source_features_hash=source_features_hash,
    )


def save_bank(bank: FeatureBank, path) -> None:
    """Persist a bank plus its manifest; the hash is re-checked on load."""
    from pathlib import Path

    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    torch.save(
        {
            "tensor": bank.tensor.detach().clone(),
            "class_names": list(bank.class_names),
            "counts": list(bank.counts),
            "sample_ids": [list(ids) for ids in bank.sample_ids],
            "source_features_hash": bank.source_features_hash,
            "content_hash": bank.content_hash(),
        },
        path,
    )


def load_bank(path) -> FeatureBank:
    from pathlib import Path

    from .integrity import verify_fingerprint

    payload = torch.load(Path(path), weights_only=False)
    bank = FeatureBank(
        tensor=payload["tensor"],
        class_names=tuple(payload["class_names"]),
        counts=tuple(payload["counts"]),
        sample_ids=tuple(tuple(ids) for ids in payload["sample_ids"]),
        source_features_hash=payload["source_features_hash"],
    )
    verify_fingerprint(payload["content_hash"], bank.tensor, what="feature bank")
    return bank


def build_bank_from_features(
    sample_ids: list[str],
    features: torch.Tensor | np.ndarray,
    class_features: ClassTextFeatureMatrix,
    k: int,
    tau: float = 1.0,
    similarity: str = "cosine",
) -> tuple[FeatureBank, HighConfidenceSet, list[PseudoLabelRecord]]:
    """Pseudo-label, select top-K per class, and assemble the bank in one go."""
    records = assign_pseudo_labels(
        sample_ids, features, class_features, tau=tau, similarity=similarity
    )
    selection = select_top_k(records, class_features.num_classes, k)
    bank = build_feature_bank(
        selection,
        class_features.class_names,
        k,
        source_features_hash=class_features.content_hash(),
    )
    return bank, flatten_selection(selection), records
