"""Zero-shot classification, prompt token learning, and source checkpoints."""

from __future__ import annotations

import math

import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from promptda import (
    ClassTextFeatureMatrix,
    EncoderConfig,
    SourceConfig,
    build_encoders,
    classify_zero_shot,
    hand_prompt_class_features,
    make_few_shot_split,
    train_source_prompts,
)
from promptda.errors import (
    ChecksumMismatchError,
    ConfigInvalidError,
    EmptyClassError,
)
from promptda.prompting import (
    LearnableClassTokens,
    cross_entropy_from_probs,
    load_source_checkpoint,
    one_hot,
    save_source_checkpoint,
)


# ---------------------------------------------------------------------------
# zero-shot probabilities: frozen oracle values


def test_softmax_oracle_two_class():
    # cosine similarities are exactly (1, 0): softmax gives the classic pair
    image = torch.tensor([[1.0, 0.0]])
    classes = torch.tensor([[1.0, 0.0], [0.0, 1.0]])
    probs = classify_zero_shot(image, classes, tau=1.0)
    expected = torch.tensor([[0.73105858, 0.26894142]])
    assert torch.allclose(probs, expected, atol=1e-6)


def test_high_temperature_flattens_to_uniform():
    image = torch.randn(8, 5)
    classes = torch.randn(3, 5)
    probs = classify_zero_shot(image, classes, tau=1e6)
    assert torch.allclose(probs, torch.full((8, 3), 1.0 / 3.0), atol=1e-4)


def test_low_temperature_sharpens_to_argmax():
    image = torch.tensor([[1.0, 0.0]])
    classes = torch.tensor([[1.0, 0.0], [0.0, 1.0]])
    probs = classify_zero_shot(image, classes, tau=0.01)
    assert probs[0, 0] > 0.9999


def test_cosine_ignores_magnitude_dot_does_not():
    image = torch.tensor([[2.0, 0.0]])
    classes = torch.tensor([[1.0, 0.0], [0.0, 3.0]])
    cos = classify_zero_shot(image, classes, similarity="cosine")
    ref = classify_zero_shot(image / 2, classes / 3, similarity="cosine")
    assert torch.allclose(cos, ref, atol=1e-7)
    dot = classify_zero_shot(image, classes, similarity="dot")
    assert not torch.allclose(cos, dot, atol=1e-3)


def test_zero_shot_rejects_bad_inputs():
    image = torch.randn(2, 4)
    classes = torch.randn(3, 4)
    with pytest.raises(ConfigInvalidError):
        classify_zero_shot(image, classes, tau=0.0)
    with pytest.raises(ConfigInvalidError):
        classify_zero_shot(image, classes, similarity="L2")
    with pytest.raises(ConfigInvalidError):
        classify_zero_shot(image, torch.randn(3, 5))


@settings(max_examples=30, deadline=None)
@given(
    n=st.integers(min_value=1, max_value=6),
    c=st.integers(min_value=2, max_value=5),
    seed=st.integers(min_value=0, max_value=2**16),
)
def test_zero_shot_rows_are_distributions(n, c, seed):
    rng = np.random.default_rng(seed)
    image = torch.from_numpy(rng.normal(size=(n, 8)) + 0.05)
    classes = torch.from_numpy(rng.normal(size=(c, 8)) + 0.05)
    probs = classify_zero_shot(image, classes)
    assert (probs > 0).all()
    assert torch.allclose(probs.sum(dim=1), torch.ones(n, dtype=probs.dtype), atol=1e-6)


# ---------------------------------------------------------------------------
# cross-entropy oracle values


def test_cross_entropy_frozen_values():
    # fifty-fifty guess on the true class: exactly log 2
    probs = torch.tensor([[0.5, 0.5]])
    targets = one_hot(torch.tensor([0]), 2)
    assert math.isclose(float(cross_entropy_from_probs(probs, targets)), math.log(2.0), rel_tol=1e-6)
    # uniform over C classes: exactly log C
    c = 5
    probs = torch.full((3, c), 1.0 / c)
    targets = one_hot(torch.tensor([0, 2, 4]), c)
    assert math.isclose(float(cross_entropy_from_probs(probs, targets)), math.log(c), rel_tol=1e-6)
    # confident and right: near zero
    probs = torch.tensor([[1.0, 0.0]])
    targets = one_hot(torch.tensor([0]), 2)
    assert float(cross_entropy_from_probs(probs, targets)) < 1e-6


def test_one_hot_shape_and_values():
    out = one_hot(np.array([0, 2]), 3)
    assert torch.equal(out, torch.tensor([[1.0, 0.0, 0.0], [0.0, 0.0, 1.0]]))


# ---------------------------------------------------------------------------
# class text feature container


def test_class_feature_matrix_hash_and_freeze():
    feats = torch.randn(3, 8)
    m = ClassTextFeatureMatrix(feats, ("a", "b", "c"), phase_tag="source", frozen=False)
    h = m.content_hash()
    assert h == m.content_hash()
    frozen = m.freeze()
    assert frozen.frozen and frozen.content_hash() == h
    different = ClassTextFeatureMatrix(feats + 1, ("a", "b", "c"), phase_tag="source")
    assert different.content_hash() != h


def test_class_feature_matrix_validates_shape():
    with pytest.raises(ConfigInvalidError):
        ClassTextFeatureMatrix(torch.randn(2, 8), ("a", "b", "c"), phase_tag="source")
    with pytest.raises(ConfigInvalidError):
        ClassTextFeatureMatrix(torch.randn(3, 8), ("a", "b", "c"), phase_tag="nonsense")


# ---------------------------------------------------------------------------
# learnable tokens


def test_learnable_tokens_sequences_and_grad(tiny_encoders):
    text = tiny_encoders.text
    anchors = torch.stack([text.class_anchor_token(c) for c in range(3)])
    tokens = LearnableClassTokens(
        num_classes=3,
        token_dim=text.token_dim,
        prefix_tokens=text.prefix_tokens,
        class_name_tokens=anchors,
        init_std=0.02,
        seed=0,
    )
    seqs = tokens.build_sequences()
    # prefix (4) + one learned token per class + one class-name token
    assert seqs.shape == (3, 4 + 1 + 1, text.token_dim)
    assert tokens.tokens.requires_grad
    out = text.encode_token_batch(seqs)
    out.sum().backward()
    assert tokens.tokens.grad is not None
    assert float(tokens.tokens.grad.abs().sum()) > 0


def test_learnable_tokens_seeded_init(tiny_encoders):
    text = tiny_encoders.text
    kwargs = dict(
        num_classes=2,
        token_dim=text.token_dim,
        prefix_tokens=text.prefix_tokens,
        class_name_tokens=None,
        init_std=0.02,
    )
    a = LearnableClassTokens(seed=3, **kwargs)
    b = LearnableClassTokens(seed=3, **kwargs)
    c = LearnableClassTokens(seed=4, **kwargs)
    assert torch.equal(a.tokens, b.tokens)
    assert not torch.equal(a.tokens, c.tokens)


# ---------------------------------------------------------------------------
# few-shot split


def test_few_shot_split_counts_and_determinism(tiny_task):
    split_a = make_few_shot_split(
        tiny_task.source_ids, tiny_task.source_labels, tiny_task.class_names,
        shots=4, seed=0,
    )
    split_b = make_few_shot_split(
        tiny_task.source_ids, tiny_task.source_labels, tiny_task.class_names,
        shots=4, seed=0,
    )
    assert split_a.per_class_counts() == [4, 4, 4]
    assert split_a.sample_ids == split_b.sample_ids
    split_c = make_few_shot_split(
        tiny_task.source_ids, tiny_task.source_labels, tiny_task.class_names,
        shots=4, seed=1,
    )
    assert split_a.sample_ids != split_c.sample_ids


def test_few_shot_split_warns_when_underpopulated(tiny_task):
    with pytest.warns(UserWarning, match="only"):
        split = make_few_shot_split(
            tiny_task.source_ids, tiny_task.source_labels, tiny_task.class_names,
            shots=50, seed=0,
        )
    assert split.per_class_counts() == [6, 6, 6]


def test_few_shot_split_rejects_missing_class(tiny_task):
    keep = [i for i, y in enumerate(tiny_task.source_labels) if y != 2]
    with pytest.raises(EmptyClassError):
        make_few_shot_split(
            [tiny_task.source_ids[i] for i in keep],
            tiny_task.source_labels[keep],
            tiny_task.class_names,
            shots=2,
            seed=0,
        )


# ---------------------------------------------------------------------------
# source prompt training


@pytest.fixture()
def trained_source(tiny_task):
    encoders = build_encoders(EncoderConfig(embed_dim=8, seed=3))
    encoders.image.register_samples(tiny_task.source_ids, tiny_task.source_features)
    split = make_few_shot_split(
        tiny_task.source_ids, tiny_task.source_labels, tiny_task.class_names,
        shots=4, seed=0,
    )
    config = SourceConfig(shots=4, epochs=30, lr=0.05, tau=0.07, batch_size=8, seed=0)
    result = train_source_prompts(split, encoders, config)
    return encoders, split, config, result


def test_source_training_reduces_loss(trained_source):
    _, _, _, result = trained_source
    assert result.final_loss < result.initial_loss
    assert len(result.loss_history) == 30
    assert all(math.isfinite(v) for v in result.loss_history)


def test_source_training_touches_only_the_tokens(trained_source):
    encoders, _, _, result = trained_source
    assert result.encoder_checksum_before == result.encoder_checksum_after
    assert encoders.state_checksum() == result.encoder_checksum_after
    assert set(result.trained_parameters) == {"class_tokens"}


def test_source_training_output_is_frozen_unit_features(trained_source):
    _, _, _, result = trained_source
    matrix = result.class_features
    assert matrix.frozen
    assert matrix.phase_tag == "source"
    norms = torch.linalg.vector_norm(matrix.features, dim=1)
    assert torch.allclose(norms, torch.ones(3), atol=1e-5)


def test_source_training_is_seed_reproducible(tiny_task):
    results = []
    for _ in range(2):
        encoders = build_encoders(EncoderConfig(embed_dim=8, seed=3))
        encoders.image.register_samples(tiny_task.source_ids, tiny_task.source_features)
        split = make_few_shot_split(
            tiny_task.source_ids, tiny_task.source_labels, tiny_task.class_names,
            shots=4, seed=0,
        )
        config = SourceConfig(shots=4, epochs=10, lr=0.05, tau=0.07, seed=0)
        results.append(train_source_prompts(split, encoders, config))
    assert torch.equal(results[0].class_features.features, results[1].class_features.features)
    assert results[0].loss_history == results[1].loss_history


def test_hand_prompt_baseline_shape(tiny_encoders, tiny_task):
    matrix = hand_prompt_class_features(tiny_encoders, tiny_task.class_names)
    assert matrix.features.shape == (3, 8)
    assert matrix.frozen


# ---------------------------------------------------------------------------
# source checkpoint round-trip


def test_source_checkpoint_round_trip(trained_source, tmp_path):
    encoders, split, config, result = trained_source
    out = tmp_path / "source"
    save_source_checkpoint(out, result, split, config)
    loaded, manifest = load_source_checkpoint(out)
    assert torch.allclose(loaded.features, result.class_features.features)
    assert loaded.content_hash() == result.class_features.content_hash()
    assert manifest["content_hash"] == loaded.content_hash()
    assert manifest["frozen"] is True


def test_source_checkpoint_detects_tampering(trained_source, tmp_path):
    encoders, split, config, result = trained_source
    out = tmp_path / "source"
    save_source_checkpoint(out, result, split, config)
    feats = np.load(out / "class_features.npy")
    feats[0, 0] += 0.1
    np.save(out / "class_features.npy", feats)
    with pytest.raises(ChecksumMismatchError):
        load_source_checkpoint(out)
