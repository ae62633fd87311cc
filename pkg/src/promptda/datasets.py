"""Dataset ingestion and desk-scale synthetic task generation.

Directory datasets follow the ``root/domain/class/sample`` layout common to
domain-adaptation benchmarks; every domain must expose the identical class
set. Synthetic tasks generate a labeled source domain and a shifted,
label-held-out target domain directly in embedding space, so the mock
encoder pair can run the full pipeline without any image data.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import (
    ClassMismatchAcrossDomainsError,
    DegenerateSpecError,
    EmptyDomainError,
)


@dataclass(frozen=True)
class DomainDataset:
    """Manifest of a directory dataset: one row per (domain, class, sample)."""

    root: Path
    domains: tuple[str, ...]
    classes: tuple[str, ...]
    manifest: tuple[tuple[str, str, str], ...]  # (domain, class, sample id)

    def samples_in(self, domain: str) -> list[tuple[str, str]]:
        """(class, sample id) rows of one domain."""
        return [(c, s) for d, c, s in self.manifest if d == domain]


def ingest_dataset(root: str | Path) -> DomainDataset:
    """Scan a ``root/domain/class/sample`` tree into a manifest.

    Sample ids are paths relative to the root so manifests stay portable.
    """
    root = Path(root)
    if not root.is_dir():
        raise EmptyDomainError(f"dataset root {root} is not a directory")
    domains = sorted(p.name for p in root.iterdir() if p.is_dir())
    if not domains:
        raise EmptyDomainError(f"no domain directories under {root}")

    per_domain_classes: dict[str, tuple[str, ...]] = {}
    rows: list[tuple[str, str, str]] = []
    for domain in domains:
        class_dirs = sorted(p for p in (root / domain).iterdir() if p.is_dir())
        classes = tuple(p.name for p in class_dirs)
        if not classes:
            raise EmptyDomainError(f"domain {domain!r} has no class directories")
        per_domain_classes[domain] = classes
        count = 0
        for class_dir in class_dirs:
            for sample in sorted(p for p in class_dir.iterdir() if p.is_file()):
                rows.append((domain, class_dir.name, str(sample.relative_to(root))))
                count += 1
        if count == 0:
            raise EmptyDomainError(f"domain {domain!r} has no samples")

    reference = per_domain_classes[domains[0]]
    for domain, classes in per_domain_classes.items():
        if classes != reference:
            raise ClassMismatchAcrossDomainsError(
                f"domain {domain!r} classes {classes} != {domains[0]!r} "
                f"classes {reference}"
            )
    return DomainDataset(
        root=root, domains=tuple(domains), classes=reference, manifest=tuple(rows)
    )


def load_domain_features(
    dataset: DomainDataset, domain: str
) -> tuple[list[str], np.ndarray, np.ndarray]:
    """Load per-sample ``.npy`` feature vectors for one domain.

    Returns (sample ids, features ``[N, D]``, integer labels). Only the
    vector layout is supported here; image files are decoded by the
    pretrained backend instead.
    """
    if domain not in dataset.domains:
        raise EmptyDomainError(f"domain {domain!r} not in dataset {dataset.domains}")
    ids, vectors, labels = [], [], []
    class_index = {c: i for i, c in enumerate(dataset.classes)}
    for class_name, sample_id in dataset.samples_in(domain):
        path = dataset.root / sample_id
        vectors.append(np.load(path))
        ids.append(sample_id)
        labels.append(class_index[class_name])
    return ids, np.stack(vectors), np.asarray(labels, dtype=np.int64)


@dataclass(frozen=True)
class SyntheticTaskSpec:
    """Recipe for a two-domain classification task in embedding space.

    Target cluster centers are the source centers pushed through a global
    rotation (every vector turns by ``rotation_deg``) plus a translation of
    magnitude ``translation`` along a random direction, producing a genuine
    and controllable domain gap.

    ``confuser_fraction`` replaces that share of each target class's samples
    with points drawn tightly (``confuser_sigma``) around a *different*
    class's source-domain center while keeping the original label. Such
    samples look exactly like wrong-class prototypes to a source classifier,
    so they top every confidence ranking: selection schemes trusting a
    single most-confident sample per class inherit them, while averaging
    over several confident samples dilutes them.
    """

    classes: int = 5
    dim: int = 32
    source_per_class: int = 20
    target_per_class: int = 40
    rotation_deg: float = 30.0
    translation: float = 0.5
    noise_sigma: float = 0.30
    label_noise: float = 0.0
    confuser_fraction: float = 0.0
    confuser_sigma: float = 0.1
    seed: int = 0

    def validate(self) -> None:
        if self.classes < 2 or self.dim < 2:
            raise DegenerateSpecError("need classes >= 2 and dim >= 2")
        if self.classes > self.dim:
            raise DegenerateSpecError(
                "orthonormal anchors need dim >= classes "
                f"(got classes={self.classes}, dim={self.dim})"
            )
        if self.source_per_class < 1 or self.target_per_class < 1:
            raise DegenerateSpecError("need at least one sample per class per domain")
        if not 0.0 <= self.label_noise < 1.0:
            raise DegenerateSpecError("label_noise must be in [0, 1)")
        if self.noise_sigma < 0:
            raise DegenerateSpecError("noise_sigma must be nonnegative")
        if not 0.0 <= self.confuser_fraction < 1.0:
            raise DegenerateSpecError("confuser_fraction must be in [0, 1)")
        if self.confuser_sigma < 0:
            raise DegenerateSpecError("confuser_sigma must be nonnegative")


@dataclass
class SyntheticTask:
    """Generated two-domain task; target labels are for evaluation only."""

    spec: SyntheticTaskSpec
    class_names: list[str]
    source_ids: list[str]
    source_features: np.ndarray
    source_labels: np.ndarray
    target_ids: list[str]
    target_features: np.ndarray
    target_labels: np.ndarray = field(repr=False)
    source_anchors: np.ndarray = field(repr=False, default=None)
    target_anchors: np.ndarray = field(repr=False, default=None)


def _rotation_matrix(dim: int, angle_rad: float, rng: np.random.Generator) -> np.ndarray:
    """Rotation turning every vector by ``angle_rad``.

    Built as Givens blocks on consecutive coordinate pairs of a random
    orthonormal basis; an odd trailing coordinate stays fixed.
    """
    q, _ = np.linalg.qr(rng.normal(size=(dim, dim)))
    block = np.eye(dim)
    c, s = np.cos(angle_rad), np.sin(angle_rad)
    for i in range(0, dim - 1, 2):
        block[i : i + 2, i : i + 2] = [[c, -s], [s, c]]
    return q @ block @ q.T


def generate_synthetic_task(spec: SyntheticTaskSpec) -> SyntheticTask:
    """Deterministically generate the two-domain task described by ``spec``."""
    spec.validate()
    rng = np.random.default_rng(spec.seed)

    raw = rng.normal(size=(spec.dim, spec.classes))
    anchors = np.linalg.qr(raw)[0].T  # [C, dim], orthonormal rows

    rotation = _rotation_matrix(spec.dim, np.deg2rad(spec.rotation_deg), rng)
    shift_dir = rng.normal(size=spec.dim)
    shift_dir /= np.linalg.norm(shift_dir)
    target_anchors = anchors @ rotation.T + spec.translation * shift_dir

    def sample_domain(domain_anchors, per_class, prefix):
        ids, feats, labels = [], [], []
        for c in range(spec.classes):
            noise = rng.normal(scale=spec.noise_sigma, size=(per_class, spec.dim))
            feats.append(domain_anchors[c] + noise)
            labels.extend([c] * per_class)
            ids.extend(f"{prefix}_{c:02d}_{i:04d}" for i in range(per_class))
        return ids, np.concatenate(feats), np.asarray(labels, dtype=np.int64)

    src_ids, src_feats, src_labels = sample_domain(
        anchors, spec.source_per_class, "src"
    )
    tgt_ids, tgt_feats, tgt_labels = sample_domain(
        target_anchors, spec.target_per_class, "tgt"
    )

    if spec.confuser_fraction > 0:
        n_conf = int(round(spec.confuser_fraction * spec.target_per_class))
        for c in range(spec.classes):
            rows = np.flatnonzero(tgt_labels == c)[:n_conf]
            for row in rows:
                other = int((c + rng.integers(1, spec.classes)) % spec.classes)
                tgt_feats[row] = anchors[other] + rng.normal(
                    scale=spec.confuser_sigma, size=spec.dim
                )

    if spec.label_noise > 0:
        n_flip = int(round(spec.label_noise * len(src_labels)))
        flip_idx = rng.choice(len(src_labels), size=n_flip, replace=False)
        for i in flip_idx:
            offset = rng.integers(1, spec.classes)
            src_labels[i] = (src_labels[i] + offset) % spec.classes

    return SyntheticTask(
        spec=spec,
        class_names=[f"class_{c:02d}" for c in range(spec.classes)],
        source_ids=src_ids,
        source_features=src_feats,
        source_labels=src_labels,
        target_ids=tgt_ids,
        target_features=tgt_feats,
        target_labels=tgt_labels,
        source_anchors=anchors,
        target_anchors=target_anchors,
    )


def nearest_anchor_accuracy(
    features: np.ndarray,
    labels: np.ndarray,
    anchors: np.ndarray,
    metric: str = "cosine",
) -> float:
    """Accuracy of the nearest-anchor classifier; independent baseline oracle."""
    feats = np.asarray(features, dtype=np.float64)
    if metric == "cosine":
        f = feats / np.linalg.norm(feats, axis=1, keepdims=True)
        a = anchors / np.linalg.norm(anchors, axis=1, keepdims=True)
        pred = np.argmax(f @ a.T, axis=1)
    elif metric == "euclidean":
        d = np.linalg.norm(feats[:, None, :] - anchors[None, :, :], axis=2)
        pred = np.argmin(d, axis=1)
    else:
        raise ValueError(f"unknown metric {metric!r}")
    return float(np.mean(pred == np.asarray(labels)))


def save_task(task: SyntheticTask, directory: str | Path) -> Path:
    """Persist a generated task as one ``.npz`` plus its spec fields."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    path = directory / "task.npz"
    np.savez(
        path,
        source_features=task.source_features,
        source_labels=task.source_labels,
        target_features=task.target_features,
        target_labels=task.target_labels,
        source_anchors=task.source_anchors,
        target_anchors=task.target_anchors,
        source_ids=np.array(task.source_ids),
        target_ids=np.array(task.target_ids),
        class_names=np.array(task.class_names),
        spec_json=np.array(repr(task.spec.__dict__)),
        **{f"spec_{k}": v for k, v in task.spec.__dict__.items()},
    )
    return path


def load_task(path: str | Path) -> SyntheticTask:
    data = np.load(Path(path), allow_pickle=False)
    spec = SyntheticTaskSpec(
        classes=int(data["spec_classes"]),
        dim=int(data["spec_dim"]),
        source_per_class=int(data["spec_source_per_class"]),
        target_per_class=int(data["spec_target_per_class"]),
        rotation_deg=float(data["spec_rotation_deg"]),
        translation=float(data["spec_translation"]),
        noise_sigma=float(data["spec_noise_sigma"]),
        label_noise=float(data["spec_label_noise"]),
        confuser_fraction=float(data["spec_confuser_fraction"]),
        confuser_sigma=float(data["spec_confuser_sigma"]),
        seed=int(data["spec_seed"]),
    )
    return SyntheticTask(
        spec=spec,
        class_names=[str(c) for c in data["class_names"]],
        source_ids=[str(s) for s in data["source_ids"]],
        source_features=data["source_features"],
        source_labels=data["source_labels"],
        target_ids=[str(s) for s in data["target_ids"]],
        target_features=data["target_features"],
        target_labels=data["target_labels"],
        source_anchors=data["source_anchors"],
        target_anchors=data["target_anchors"],
    )
