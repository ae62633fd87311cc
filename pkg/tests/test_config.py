"""Config schema: defaults, validation, strict key checking, round-trips."""

from __future__ import annotations

import pytest

from promptda import (
    AdaptationConfig,
    EncoderConfig,
    ExperimentConfig,
    SourceConfig,
    calibrated_synthetic_experiment,
    config_from_dict,
    config_to_dict,
    load_config,
    save_config,
)
from promptda.errors import ConfigInvalidError


# ---------------------------------------------------------------------------
# documented defaults


def test_source_defaults():
    cfg = SourceConfig()
    assert cfg.shots == 8
    assert cfg.lr == 1e-3
    assert cfg.weight_decay == 5e-4
    assert cfg.batch_size == 32
    assert cfg.tau == 1.0
    assert cfg.similarity == "cosine"


def test_adaptation_defaults():
    cfg = AdaptationConfig()
    assert cfg.alpha_fuse == 0.5
    assert cfg.bank_size == 8
    assert cfg.prompt_tokens == 16
    assert cfg.theta == 0.95
    assert cfg.lr == 1e-3
    assert cfg.momentum_beta == 0.9
    assert cfg.weight_decay == 5e-4
    assert cfg.batch_size == 32
    assert cfg.schedule == "cosine_annealing"
    assert tuple(cfg.seeds) == (0, 1, 2)
    assert cfg.use_pseudo_ce and cfg.use_consistency and cfg.use_info_max
    assert cfg.bank_trainable is True


def test_encoder_defaults():
    cfg = EncoderConfig()
    assert cfg.backend == "mock"
    assert cfg.max_sequence_length == 77


# ---------------------------------------------------------------------------
# validation


@pytest.mark.parametrize(
    "kwargs",
    [
        {"alpha_fuse": 1.5},
        {"alpha_fuse": -0.1},
        {"bank_size": 0},
        {"prompt_tokens": 0},
        {"theta": 0.0},
        {"theta": 1.5},
        {"tau": 0.0},
        {"lr": 0.0},
        {"epochs": -1},
        {"batch_size": 0},
        {"seeds": ()},
        {"schedule": "linear"},
        {"selection": "oracle"},
        {"similarity": "euclidean"},
        {"attention_scope": "mixed"},
        {"gate_mode": "matrix"},
        {"momentum_beta": 1.5},
        {"divergence_threshold": 0.0},
    ],
)
def test_adaptation_validation(kwargs):
    with pytest.raises(ConfigInvalidError):
        AdaptationConfig(**kwargs).validate()


@pytest.mark.parametrize(
    "kwargs",
    [
        {"shots": 0},
        {"epochs": -1},
        {"lr": -1.0},
        {"tau": 0.0},
        {"similarity": "manhattan"},
        {"token_init_std": 0.0},
    ],
)
def test_source_validation(kwargs):
    with pytest.raises(ConfigInvalidError):
        SourceConfig(**kwargs).validate()


def test_unknown_keys_rejected_at_every_level():
    with pytest.raises(ConfigInvalidError, match="unknown"):
        config_from_dict({"bogus_section": {}})
    with pytest.raises(ConfigInvalidError, match="unknown"):
        config_from_dict({"source": {"learning_rate": 0.1}})
    with pytest.raises(ConfigInvalidError, match="unknown"):
        config_from_dict({"adaptation": {"bank": 4}})
    with pytest.raises(ConfigInvalidError, match="unknown"):
        config_from_dict({"data": {"synthetic": {"n_classes": 3}}})


def test_empty_dict_gives_defaults():
    cfg = config_from_dict({})
    assert isinstance(cfg, ExperimentConfig)
    cfg.validate()
    assert cfg.data.kind == "synthetic"


def test_directory_kind_requires_root_and_domains():
    with pytest.raises(ConfigInvalidError):
        config_from_dict({"data": {"kind": "directory"}}).validate()


# ---------------------------------------------------------------------------
# round-trips


def test_dict_round_trip():
    cfg = calibrated_synthetic_experiment()
    payload = config_to_dict(cfg)
    again = config_from_dict(payload)
    assert config_to_dict(again) == payload


def test_yaml_round_trip(tmp_path):
    cfg = calibrated_synthetic_experiment()
    path = tmp_path / "exp.yaml"
    save_config(cfg, path)
    loaded = load_config(path)
    assert config_to_dict(loaded) == config_to_dict(cfg)


def test_repo_reference_config_matches_calibrated_factory():
    loaded = load_config("configs/synthetic.yaml")
    assert config_to_dict(loaded) == config_to_dict(calibrated_synthetic_experiment())


def test_calibrated_experiment_is_valid_and_pinned():
    cfg = calibrated_synthetic_experiment()
    cfg.validate()
    assert cfg.data.synthetic.confuser_fraction > 0  # poisoned-confidence regime
    assert cfg.adaptation.bank_size == 8
    assert tuple(cfg.adaptation.seeds) == (0, 1, 2)
