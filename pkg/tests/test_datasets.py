"""Synthetic task generation, directory ingestion, and the rotation geometry."""

from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from promptda import (
    SyntheticTaskSpec,
    generate_synthetic_task,
    ingest_dataset,
    load_domain_features,
    load_task,
    nearest_anchor_accuracy,
    save_task,
)
from promptda.datasets import _rotation_matrix
from promptda.errors import (
    ClassMismatchAcrossDomainsError,
    DegenerateSpecError,
    EmptyDomainError,
)


# ---------------------------------------------------------------------------
# spec validation


@pytest.mark.parametrize(
    "kwargs",
    [
        {"classes": 1},
        {"dim": 1},
        {"classes": 10, "dim": 4},  # orthonormal anchors impossible
        {"source_per_class": 0},
        {"target_per_class": 0},
        {"label_noise": 1.0},
        {"label_noise": -0.1},
        {"noise_sigma": -1.0},
        {"confuser_fraction": 1.0},
        {"confuser_fraction": -0.2},
        {"confuser_sigma": -0.5},
    ],
)
def test_degenerate_specs_rejected(kwargs):
    spec = SyntheticTaskSpec(**kwargs)
    with pytest.raises(DegenerateSpecError):
        spec.validate()


def test_default_spec_is_valid():
    SyntheticTaskSpec().validate()


# ---------------------------------------------------------------------------
# rotation geometry: every vector turns by exactly the requested angle


@settings(max_examples=25, deadline=None)
@given(
    dim=st.sampled_from([2, 4, 8, 16]),
    angle=st.floats(min_value=1.0, max_value=179.0),
    seed=st.integers(min_value=0, max_value=2**16),
)
def test_rotation_turns_every_vector_by_the_angle(dim, angle, seed):
    rng = np.random.default_rng(seed)
    rot = _rotation_matrix(dim, np.deg2rad(angle), rng)
    # orthogonality (norm preservation for all vectors at once)
    assert np.allclose(rot @ rot.T, np.eye(dim), atol=1e-10)
    vecs = rng.normal(size=(16, dim))
    rotated = vecs @ rot.T
    cos = np.sum(vecs * rotated, axis=1) / (
        np.linalg.norm(vecs, axis=1) * np.linalg.norm(rotated, axis=1)
    )
    assert np.allclose(cos, np.cos(np.deg2rad(angle)), atol=1e-8)


def test_rotation_handles_odd_dim():
    rng = np.random.default_rng(0)
    rot = _rotation_matrix(5, np.deg2rad(30.0), rng)
    assert np.allclose(rot @ rot.T, np.eye(5), atol=1e-10)
    # one direction of a 5-dim space stays fixed; the rest turn by 30 degrees
    eigvals = np.linalg.eigvals(rot)
    assert np.isclose(np.sort(np.abs(eigvals - 1.0))[0], 0.0, atol=1e-8)


# ---------------------------------------------------------------------------
# task generation


def test_generated_task_shapes_and_labels(tiny_spec, tiny_task):
    spec, task = tiny_spec, tiny_task
    n_src = spec.classes * spec.source_per_class
    n_tgt = spec.classes * spec.target_per_class
    assert task.source_features.shape == (n_src, spec.dim)
    assert task.target_features.shape == (n_tgt, spec.dim)
    assert len(task.source_ids) == n_src and len(task.target_ids) == n_tgt
    assert len(set(task.source_ids)) == n_src  # unique ids
    counts = np.bincount(task.source_labels, minlength=spec.classes)
    assert (counts == spec.source_per_class).all()
    assert len(task.class_names) == spec.classes


def test_source_anchors_orthonormal(tiny_task):
    a = tiny_task.source_anchors
    assert np.allclose(a @ a.T, np.eye(a.shape[0]), atol=1e-10)


def test_target_anchors_are_rotation_plus_translation(tiny_spec, tiny_task):
    # pairwise anchor differences cancel the shared translation, leaving the
    # pure rotation: distances are preserved and every difference vector
    # turns by exactly the configured angle
    src, tgt = tiny_task.source_anchors, tiny_task.target_anchors
    expected_cos = np.cos(np.deg2rad(tiny_spec.rotation_deg))
    for i in range(src.shape[0]):
        for j in range(i + 1, src.shape[0]):
            ds, dt = src[i] - src[j], tgt[i] - tgt[j]
            assert np.isclose(np.linalg.norm(ds), np.linalg.norm(dt), atol=1e-8)
            cos = ds @ dt / (np.linalg.norm(ds) * np.linalg.norm(dt))
            assert np.isclose(cos, expected_cos, atol=1e-8)


def test_zero_translation_keeps_anchors_on_sphere(tiny_spec):
    import dataclasses

    task = generate_synthetic_task(dataclasses.replace(tiny_spec, translation=0.0))
    norms = np.linalg.norm(task.target_anchors, axis=1)
    assert np.allclose(norms, 1.0, atol=1e-8)
    cos = np.sum(task.source_anchors * task.target_anchors, axis=1)
    assert np.allclose(cos, np.cos(np.deg2rad(tiny_spec.rotation_deg)), atol=1e-8)


def test_generation_is_deterministic(tiny_spec):
    a = generate_synthetic_task(tiny_spec)
    b = generate_synthetic_task(tiny_spec)
    assert np.array_equal(a.source_features, b.source_features)
    assert np.array_equal(a.target_features, b.target_features)
    assert a.source_ids == b.source_ids


def test_different_seed_changes_data(tiny_spec):
    import dataclasses

    a = generate_synthetic_task(tiny_spec)
    b = generate_synthetic_task(dataclasses.replace(tiny_spec, seed=tiny_spec.seed + 1))
    assert not np.array_equal(a.source_features, b.source_features)


def test_nearest_anchor_accuracy_oracle():
    anchors = np.eye(3, dtype=np.float64)
    feats = np.array([[1.0, 0.05, 0.0], [0.0, 1.0, 0.1], [0.1, 0.0, 1.0]])
    labels = np.array([0, 1, 2])
    assert nearest_anchor_accuracy(feats, labels, anchors) == 1.0
    wrong = np.array([1, 2, 0])
    assert nearest_anchor_accuracy(feats, wrong, anchors) == 0.0
    assert nearest_anchor_accuracy(feats, labels, anchors, metric="euclidean") == 1.0


def test_domain_gap_exists_and_is_systematic(tiny_spec):
    import dataclasses

    spec = dataclasses.replace(
        tiny_spec, rotation_deg=70.0, translation=1.0, noise_sigma=0.15,
        target_per_class=40,
    )
    task = generate_synthetic_task(spec)
    src_acc = nearest_anchor_accuracy(
        task.source_features, task.source_labels, task.source_anchors
    )
    tgt_on_src = nearest_anchor_accuracy(
        task.target_features, task.target_labels, task.source_anchors
    )
    tgt_on_tgt = nearest_anchor_accuracy(
        task.target_features, task.target_labels, task.target_anchors
    )
    assert src_acc == 1.0
    assert tgt_on_tgt > tgt_on_src  # the shift is real and systematic


def test_label_noise_flips_expected_count(tiny_spec):
    import dataclasses

    clean = generate_synthetic_task(tiny_spec)
    noisy = generate_synthetic_task(dataclasses.replace(tiny_spec, label_noise=0.25))
    n = len(clean.source_labels)
    flipped = int(np.sum(clean.source_labels != noisy.source_labels))
    assert flipped == int(round(0.25 * n))


def test_confusers_sit_on_wrong_source_anchors(tiny_spec):
    import dataclasses

    spec = dataclasses.replace(
        tiny_spec, confuser_fraction=0.25, confuser_sigma=0.01, noise_sigma=0.05
    )
    task = generate_synthetic_task(spec)
    n_conf = int(round(spec.confuser_fraction * spec.target_per_class))
    planted = 0
    for c in range(spec.classes):
        rows = np.flatnonzero(task.target_labels == c)[:n_conf]
        for row in rows:
            dists = np.linalg.norm(task.source_anchors - task.target_features[row], axis=1)
            nearest = int(np.argmin(dists))
            assert nearest != c  # near a *wrong* class's source anchor
            assert dists[nearest] < 0.1
            planted += 1
    assert planted == spec.classes * n_conf
    # labels were kept, so nearest-source-anchor accuracy drops below clean
    clean = generate_synthetic_task(dataclasses.replace(spec, confuser_fraction=0.0))
    acc_clean = nearest_anchor_accuracy(
        clean.target_features, clean.target_labels, clean.source_anchors
    )
    acc_conf = nearest_anchor_accuracy(
        task.target_features, task.target_labels, task.source_anchors
    )
    assert acc_conf < acc_clean


# ---------------------------------------------------------------------------
# persistence round-trip


def test_save_load_task_round_trip(tiny_task, tmp_path):
    path = save_task(tiny_task, tmp_path / "task")
    loaded = load_task(path)
    assert np.array_equal(loaded.source_features, tiny_task.source_features)
    assert np.array_equal(loaded.target_features, tiny_task.target_features)
    assert np.array_equal(loaded.target_labels, tiny_task.target_labels)
    assert loaded.source_ids == tiny_task.source_ids
    assert loaded.class_names == tiny_task.class_names
    assert loaded.spec == tiny_task.spec


# ---------------------------------------------------------------------------
# directory ingestion


def _make_feature_tree(root, domains=("art", "real"), classes=("cat", "dog"), n=3, dim=4):
    rng = np.random.default_rng(0)
    for domain in domains:
        for cls in classes:
            folder = root / domain / cls
            folder.mkdir(parents=True)
            for i in range(n):
                np.save(folder / f"s{i}.npy", rng.normal(size=dim).astype(np.float32))


def test_ingest_dataset_and_load_features(tmp_path):
    _make_feature_tree(tmp_path)
    ds = ingest_dataset(tmp_path)
    assert ds.domains == ("art", "real")
    assert ds.classes == ("cat", "dog")
    ids, feats, labels = load_domain_features(ds, "art")
    assert feats.shape == (6, 4)
    assert sorted(set(labels.tolist())) == [0, 1]
    assert len(ids) == 6


def test_ingest_rejects_empty_domain(tmp_path):
    _make_feature_tree(tmp_path)
    (tmp_path / "sketch").mkdir()
    with pytest.raises(EmptyDomainError):
        ingest_dataset(tmp_path)


def test_ingest_rejects_class_mismatch(tmp_path):
    _make_feature_tree(tmp_path)
    extra = tmp_path / "art" / "bird"
    extra.mkdir()
    np.save(extra / "s0.npy", np.zeros(4, dtype=np.float32))
    with pytest.raises(ClassMismatchAcrossDomainsError):
        ingest_dataset(tmp_path)
