"""Frozen dual-encoder backends.

The adaptation pipeline never trains encoder weights; it only needs two
callables: an image encoder mapping samples to ``[B, D]`` features and a
text encoder mapping token-embedding sequences to a ``D``-vector, so that
learnable tokens can be injected mid-sequence.

Two backends are provided:

* ``mock`` — a fully deterministic pair for desk-scale runs and tests.
  Image "encoding" is a lookup of stored per-sample embeddings (identity on
  raw feature arrays), text "encoding" is a fixed seeded linear projection
  of the mean input token followed by unit normalization.
* ``pretrained`` — an optional plug-in around a real vision-language
  checkpoint, resolved lazily so its dependencies are never required by the
  mock path.
"""

from __future__ import annotations

import hashlib
from typing import Mapping, Sequence

import numpy as np
import torch

from .errors import (
    BackendUnavailableError,
    ConfigInvalidError,
    DegenerateEmbeddingError,
    SequenceTooLongError,
    ShapeMismatchError,
    UnknownSampleError,
)
from .integrity import tensor_fingerprint
from .validation import as_tensor

PROMPT_PREFIX_WORDS = ("a", "photo", "of", "a")

DEFAULT_MAX_SEQUENCE_LENGTH = 77


def _seeded_vector(seed: int, tag: str, dim: int, std: float = 1.0) -> np.ndarray:
    """Deterministic vector derived from (seed, tag), stable across platforms."""
    digest = hashlib.sha256(f"{seed}:{tag}".encode()).digest()
    rng = np.random.Generator(np.random.PCG64(int.from_bytes(digest[:8], "little")))
    return rng.normal(0.0, std, size=dim)


class MockImageEncoder:
    """Identity encoder over a registry of stored sample embeddings.

    Batches may be lists of sample ids (looked up in the registry) or raw
    feature arrays (returned unchanged); both paths are gradient-free and
    bit-deterministic.
    """

    backend_id = "mock"
    frozen = True

    def __init__(self, embed_dim: int, dtype: torch.dtype = torch.float32):
        if embed_dim < 1:
            raise ConfigInvalidError("embed_dim must be positive")
        self.embed_dim = embed_dim
        self.dtype = dtype
        self._samples: dict[str, torch.Tensor] = {}

    def register_samples(self, ids: Sequence[str], features) -> None:
        feats = as_tensor(features, self.dtype)
        if feats.ndim != 2 or feats.shape[0] != len(ids):
            raise ConfigInvalidError(
                f"features must be [{len(ids)}, D], got {tuple(feats.shape)}"
            )
        if feats.shape[1] != self.embed_dim:
            raise ShapeMismatchError(
                f"feature dim {feats.shape[1]} != embed_dim {self.embed_dim}"
            )
        for sid, row in zip(ids, feats):
            self._samples[str(sid)] = row.clone()

    @property
    def known_ids(self) -> list[str]:
        return sorted(self._samples)

    def encode(self, batch) -> torch.Tensor:
        """Encode a batch of sample ids or a raw ``[B, D]`` feature array."""
        if isinstance(batch, (list, tuple)) and (
            len(batch) == 0 or isinstance(batch[0], str)
        ):
            if len(batch) == 0:
                raise ConfigInvalidError("batch must be nonempty")
            missing = [sid for sid in batch if sid not in self._samples]
            if missing:
                raise UnknownSampleError(f"unknown sample ids: {missing[:5]}")
            return torch.stack([self._samples[sid] for sid in batch])
        feats = as_tensor(batch, self.dtype)
        if feats.ndim != 2 or feats.shape[0] == 0:
            raise ConfigInvalidError(
                f"batch must be a nonempty [B, D] array, got {tuple(feats.shape)}"
            )
        return feats

    def state_tensors(self) -> dict[str, torch.Tensor]:
        return {f"sample/{sid}": self._samples[sid] for sid in sorted(self._samples)}

    def state_checksum(self) -> str:
        state = self.state_tensors()
        return tensor_fingerprint(*(state[k] for k in sorted(state)))


class MockTextEncoder:
    """Seeded linear projection of the mean input token, unit-normalized.

    The projection matrix is square and bias-free: it is full-rank with
    probability one (so the class features can reach any direction on the
    sphere) and maps the all-zero sequence to the zero vector, which is
    reported as :class:`DegenerateEmbeddingError` rather than silently
    normalized.
    """

    backend_id = "mock"
    frozen = True

    def __init__(
        self,
        embed_dim: int,
        token_dim: int | None = None,
        *,
        seed: int = 0,
        class_anchor_count: int = 64,
        max_sequence_length: int = DEFAULT_MAX_SEQUENCE_LENGTH,
        dtype: torch.dtype = torch.float32,
    ):
        if embed_dim < 1:
            raise ConfigInvalidError("embed_dim must be positive")
        self.embed_dim = embed_dim
        self.token_dim = token_dim or embed_dim
        self.seed = seed
        self.max_sequence_length = max_sequence_length
        self.class_anchor_count = class_anchor_count
        self.dtype = dtype

        rng = np.random.Generator(np.random.PCG64(seed))
        # scale keeps projected norms O(1) regardless of token_dim
        proj = rng.normal(0.0, 1.0 / np.sqrt(self.token_dim), size=(embed_dim, self.token_dim))
        self.projection = torch.tensor(proj, dtype=dtype)
        self.projection.requires_grad_(False)
        anchors = rng.normal(0.0, 1.0, size=(class_anchor_count, self.token_dim))
        self.anchor_tokens = torch.tensor(anchors, dtype=dtype)
        self.anchor_tokens.requires_grad_(False)
        self.prefix_tokens = torch.stack(
            [self.word_token(w) for w in PROMPT_PREFIX_WORDS]
        )

    def word_token(self, word: str) -> torch.Tensor:
        """Fixed embedding standing in for a tokenized word."""
        vec = _seeded_vector(self.seed, f"word:{word}", self.token_dim)
        return torch.tensor(vec, dtype=self.dtype)

    def class_anchor_token(self, class_index: int) -> torch.Tensor:
        if not 0 <= class_index < self.class_anchor_count:
            raise ConfigInvalidError(
                f"class index {class_index} outside anchor table of size "
                f"{self.class_anchor_count}"
            )
        return self.anchor_tokens[class_index]

    def encode_tokens(self, tokens) -> torch.Tensor:
        """Encode one ``[L, token_dim]`` sequence to a unit ``D``-vector."""
        return self.encode_token_batch(as_tensor(tokens, self.dtype).unsqueeze(0))[0]

    def encode_token_batch(self, tokens) -> torch.Tensor:
        """Encode ``[S, L, token_dim]`` sequences to ``[S, D]`` unit vectors."""
        seqs = as_tensor(tokens, self.dtype)
        if seqs.ndim != 3 or seqs.shape[-1] != self.token_dim:
            raise SequenceTooLongError(
                f"token batch must be [S, L, {self.token_dim}], got {tuple(seqs.shape)}"
            )
        if seqs.shape[1] > self.max_sequence_length:
            raise SequenceTooLongError(
                f"sequence length {seqs.shape[1]} exceeds maximum "
                f"{self.max_sequence_length}"
            )
        mean_tok = seqs.mean(dim=1)
        proj = mean_tok @ self.projection.to(seqs.dtype).T
        norms = torch.linalg.vector_norm(proj, dim=-1, keepdim=True)
        if bool((norms.detach() < 1e-10).any()):
            raise DegenerateEmbeddingError(
                "token sequence projects to the zero vector (bias-free map)"
            )
        return proj / norms

    def state_tensors(self) -> dict[str, torch.Tensor]:
        return {"projection": self.projection, "anchors": self.anchor_tokens}

    def state_checksum(self) -> str:
        return tensor_fingerprint(self.projection, self.anchor_tokens)


class MockEncoderPair:
    """Deterministic image/text encoder pair sharing one seed and dim."""

    def __init__(
        self,
        embed_dim: int,
        token_dim: int | None = None,
        *,
        seed: int = 0,
        class_anchor_count: int = 64,
        max_sequence_length: int = DEFAULT_MAX_SEQUENCE_LENGTH,
        dtype: torch.dtype = torch.float32,
    ):
        self.seed = seed
        self.embed_dim = embed_dim
        self.image = MockImageEncoder(embed_dim, dtype=dtype)
        self.text = MockTextEncoder(
            embed_dim,
            token_dim,
            seed=seed,
            class_anchor_count=class_anchor_count,
            max_sequence_length=max_sequence_length,
            dtype=dtype,
        )

    def state_checksum(self) -> str:
        return self.image.state_checksum() + self.text.state_checksum()


def build_encoders(encoder_config) -> MockEncoderPair:
    """Construct the encoder pair named by ``encoder_config.backend``.

    Accepts an :class:`~promptda.config.EncoderConfig` or a plain mapping
    with the same keys. The pretrained backend is resolved lazily;
    requesting it without its optional dependencies or weights raises
    :class:`BackendUnavailableError` without affecting the mock path.
    """
    if isinstance(encoder_config, Mapping):
        get = encoder_config.get
    else:
        get = lambda key, default=None: getattr(encoder_config, key, default)
    backend = get("backend", "mock")
    if backend == "mock":
        return MockEncoderPair(
            embed_dim=int(get("embed_dim", 32) or 32),
            token_dim=get("token_dim"),
            seed=int(get("seed", 0) or 0),
            class_anchor_count=int(get("class_anchor_count", 64) or 64),
            max_sequence_length=int(
                get("max_sequence_length", DEFAULT_MAX_SEQUENCE_LENGTH)
                or DEFAULT_MAX_SEQUENCE_LENGTH
            ),
        )
    if backend == "pretrained":
        try:
            from .pretrained import load_pretrained_pair
        except ImportError as exc:
            raise BackendUnavailableError(
                "pretrained backend needs the optional [pretrained] extras"
            ) from exc
        return load_pretrained_pair(
            model_name=get("model_name", ""),
            weights_path=get("weights_path"),
        )
    raise ConfigInvalidError(f"unknown encoder backend {backend!r}")
