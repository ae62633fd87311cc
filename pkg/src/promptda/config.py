"""Typed experiment configuration with strict YAML loading.

Every section is a dataclass with validated defaults; unknown keys in a
config file raise ``ConfigInvalidError`` instead of being silently ignored,
so typos cannot change an experiment.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Any

import yaml

from .datasets import SyntheticTaskSpec
from .errors import ConfigInvalidError


@dataclass
class EncoderConfig:
    """Which dual-encoder backend to run and its geometry."""

    backend: str = "mock"  # {"mock", "pretrained"}
    embed_dim: int = 32
    token_dim: int | None = None
    seed: int = 0
    class_anchor_count: int = 64
    max_sequence_length: int = 77
    model_name: str = ""  # pretrained backend only
    weights_path: str | None = None

    def validate(self) -> None:
        if self.backend not in {"mock", "pretrained"}:
            raise ConfigInvalidError(f"unknown encoder backend {self.backend!r}")
        if self.embed_dim < 1:
            raise ConfigInvalidError("embed_dim must be positive")
        if self.token_dim is not None and self.token_dim < 1:
            raise ConfigInvalidError("token_dim must be positive when set")
        if self.max_sequence_length < 5:
            raise ConfigInvalidError(
                "max_sequence_length must fit the four-word prefix plus one token"
            )
        if self.backend == "pretrained" and not self.model_name:
            raise ConfigInvalidError("pretrained backend requires model_name")


@dataclass
class SourceConfig:
    """Few-shot prompt learning on the labeled source domain."""

    shots: int = 8
    epochs: int = 50
    lr: float = 1e-3
    weight_decay: float = 5e-4
    batch_size: int = 32
    tau: float = 1.0
    similarity: str = "cosine"  # {"cosine", "dot"}
    token_init_std: float = 0.02
    seed: int = 0

    def validate(self) -> None:
        if self.shots < 1:
            raise ConfigInvalidError("shots must be >= 1")
        if self.epochs < 0:
            raise ConfigInvalidError("epochs must be >= 0")
        if self.lr <= 0:
            raise ConfigInvalidError("lr must be positive")
        if self.weight_decay < 0:
            raise ConfigInvalidError("weight_decay must be >= 0")
        if self.batch_size < 1:
            raise ConfigInvalidError("batch_size must be >= 1")
        if self.tau <= 0:
            raise ConfigInvalidError("tau must be positive")
        if self.similarity not in {"cosine", "dot"}:
            raise ConfigInvalidError(f"unknown similarity {self.similarity!r}")
        if self.token_init_std <= 0:
            raise ConfigInvalidError("token_init_std must be positive")


@dataclass
class AdaptationConfig:
    """Unsupervised target-side training of the dual-branch model."""

    alpha_fuse: float = 0.5
    bank_size: int = 8  # confidence-bank entries kept per class
    prompt_tokens: int = 16  # learnable context tokens in the target prompt
    theta: float = 0.95  # confidence threshold for the consistency term
    tau: float = 1.0
    similarity: str = "cosine"
    lr: float = 1e-3
    momentum_beta: float = 0.9
    weight_decay: float = 5e-4
    decoupled_weight_decay: bool = True
    batch_size: int = 32
    epochs: int = 30
    schedule: str = "cosine_annealing"
    seeds: tuple[int, ...] = (0, 1, 2)
    selection: str = "last_epoch"  # {"last_epoch", "best_eval"}
    # loss-term switches (all on for the full objective)
    use_pseudo_ce: bool = True
    use_consistency: bool = True
    use_info_max: bool = True
    # augmentation strengths for embedding-space weak/strong views
    weak_noise_sigma: float = 0.01
    strong_noise_sigma: float = 0.1
    strong_dropout: float = 0.1
    # architecture switches
    attention_scope: str = "per_class"  # {"per_class", "global"}
    gate_mode: str = "scalar"  # {"scalar", "vector"}
    attention_dim: int | None = None  # defaults to the embedding width
    bank_trainable: bool = True
    token_init_std: float = 0.02
    divergence_threshold: float = 1e6

    def validate(self) -> None:
        if not 0.0 <= self.alpha_fuse <= 1.0:
            raise ConfigInvalidError("alpha_fuse must lie in [0, 1]")
        if self.bank_size < 1:
            raise ConfigInvalidError("bank_size must be >= 1")
        if self.prompt_tokens < 1:
            raise ConfigInvalidError("prompt_tokens must be >= 1")
        if not 0.0 < self.theta <= 1.0:
            raise ConfigInvalidError("theta must lie in (0, 1]")
        if self.tau <= 0:
            raise ConfigInvalidError("tau must be positive")
        if self.similarity not in {"cosine", "dot"}:
            raise ConfigInvalidError(f"unknown similarity {self.similarity!r}")
        if self.lr <= 0:
            raise ConfigInvalidError("lr must be positive")
        if not 0.0 <= self.momentum_beta < 1.0:
            raise ConfigInvalidError("momentum_beta must lie in [0, 1)")
        if self.weight_decay < 0:
            raise ConfigInvalidError("weight_decay must be >= 0")
        if self.batch_size < 1:
            raise ConfigInvalidError("batch_size must be >= 1")
        if self.epochs < 0:
            raise ConfigInvalidError("epochs must be >= 0")
        if self.schedule != "cosine_annealing":
            raise ConfigInvalidError(f"unknown schedule {self.schedule!r}")
        if not self.seeds:
            raise ConfigInvalidError("seeds must be nonempty")
        if self.selection not in {"last_epoch", "best_eval"}:
            raise ConfigInvalidError(f"unknown selection {self.selection!r}")
        if not (self.use_pseudo_ce or self.use_consistency or self.use_info_max):
            raise ConfigInvalidError("at least one loss term must be enabled")
        if self.weak_noise_sigma < 0 or self.strong_noise_sigma < 0:
            raise ConfigInvalidError("augmentation noise must be >= 0")
        if not 0.0 <= self.strong_dropout < 1.0:
            raise ConfigInvalidError("strong_dropout must lie in [0, 1)")
        if self.attention_scope not in {"per_class", "global"}:
            raise ConfigInvalidError(f"unknown attention_scope {self.attention_scope!r}")
        if self.gate_mode not in {"scalar", "vector"}:
            raise ConfigInvalidError(f"unknown gate_mode {self.gate_mode!r}")
        if self.attention_dim is not None and self.attention_dim < 1:
            raise ConfigInvalidError("attention_dim must be positive when set")
        if self.token_init_std <= 0:
            raise ConfigInvalidError("token_init_std must be positive")
        if self.divergence_threshold <= 0:
            raise ConfigInvalidError("divergence_threshold must be positive")


@dataclass
class DataConfig:
    """Where samples come from: a generated task or a directory tree."""

    kind: str = "synthetic"  # {"synthetic", "directory"}
    synthetic: SyntheticTaskSpec = field(default_factory=SyntheticTaskSpec)
    root: str = ""
    source_domain: str = ""
    target_domain: str = ""
    task_path: str = ""  # pre-generated task file overrides `synthetic`

    def validate(self) -> None:
        if self.kind not in {"synthetic", "directory"}:
            raise ConfigInvalidError(f"unknown data kind {self.kind!r}")
        if self.kind == "synthetic":
            self.synthetic.validate()
        else:
            if not self.root:
                raise ConfigInvalidError("directory data needs a root")
            if not self.source_domain or not self.target_domain:
                raise ConfigInvalidError("directory data needs both domain names")
            if self.source_domain == self.target_domain:
                raise ConfigInvalidError("source and target domains must differ")


@dataclass
class ExperimentConfig:
    """Full experiment: data, encoders, source phase, adaptation phase."""

    data: DataConfig = field(default_factory=DataConfig)
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    source: SourceConfig = field(default_factory=SourceConfig)
    adaptation: AdaptationConfig = field(default_factory=AdaptationConfig)
    output_dir: str = "runs/default"

    def validate(self) -> None:
        self.data.validate()
        self.encoder.validate()
        self.source.validate()
        self.adaptation.validate()
        if not self.output_dir:
            raise ConfigInvalidError("output_dir must be nonempty")


_NESTED_TYPES = {
    "data": DataConfig,
    "encoder": EncoderConfig,
    "source": SourceConfig,
    "adaptation": AdaptationConfig,
    "synthetic": SyntheticTaskSpec,
}


def _build(cls: type, payload: dict[str, Any], context: str) -> Any:
    if not isinstance(payload, dict):
        raise ConfigInvalidError(f"{context} must be a mapping, got {type(payload)}")
    known = {f.name: f for f in fields(cls)}
    unknown = sorted(set(payload) - set(known))
    if unknown:
        raise ConfigInvalidError(f"unknown keys in {context}: {unknown}")
    kwargs: dict[str, Any] = {}
    for key, value in payload.items():
        if key in _NESTED_TYPES and isinstance(value, dict):
            kwargs[key] = _build(_NESTED_TYPES[key], value, f"{context}.{key}")
        elif key == "seeds" and isinstance(value, (list, tuple)):
            kwargs[key] = tuple(int(s) for s in value)
        else:
            kwargs[key] = value
    try:
        return cls(**kwargs)
    except TypeError as exc:  # wrong value type for a field
        raise ConfigInvalidError(f"bad value in {context}: {exc}") from exc


def config_from_dict(payload: dict[str, Any]) -> ExperimentConfig:
    """Build and validate an :class:`ExperimentConfig` from a plain mapping."""
    cfg = _build(ExperimentConfig, payload, "config")
    cfg.validate()
    return cfg


def load_config(path: str | Path) -> ExperimentConfig:
    """Load a YAML experiment config, rejecting unknown keys."""
    text = Path(path).read_text()
    try:
        payload = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigInvalidError(f"could not parse {path}: {exc}") from exc
    if payload is None:
        payload = {}
    if not isinstance(payload, dict):
        raise ConfigInvalidError(f"top level of {path} must be a mapping")
    return config_from_dict(payload)


def config_to_dict(cfg: ExperimentConfig) -> dict[str, Any]:
    """Round-trippable plain-dict form (tuples become lists)."""
    payload = dataclasses.asdict(cfg)

    def _listify(obj: Any) -> Any:
        if isinstance(obj, tuple):
            return [_listify(v) for v in obj]
        if isinstance(obj, dict):
            return {k: _listify(v) for k, v in obj.items()}
        return obj

    return _listify(payload)


def save_config(cfg: ExperimentConfig, path: str | Path) -> None:
    Path(path).write_text(yaml.safe_dump(config_to_dict(cfg), sort_keys=False))
