"""Dual-branch target model: cross-attention feature transfer + soft prompts.

The transfer branch corrects the frozen source class features with a
residual read from the target feature bank (queries are source class
features, keys/values are bank entries, and a learned per-class gate scales
the correction). The prompt branch scores images against class features
produced from learnable shared context tokens. Branch logits are convexly
fused into the final prediction.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import torch

from .errors import ChecksumMismatchError, ConfigInvalidError
from .integrity import tensor_fingerprint
from .prompting import ClassTextFeatureMatrix
from .validation import as_tensor, check_matrix, unit_normalize


def fuse_class_features(
    source_features: torch.Tensor,
    bank_tensor: torch.Tensor,
    w1: torch.Tensor,
    w2: torch.Tensor,
    w3: torch.Tensor,
    scope: str = "per_class",
    gate_mode: str = "scalar",
) -> tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
    """Residually correct source class features with bank attention.

    Queries are ``source_features @ w1``; keys are projected bank entries;
    values are the raw bank entries. ``per_class`` scope restricts each
    class's read to its own bank slice, ``global`` lets every class attend
    over all ``C*K`` entries. The read ``A`` is added back through a gate
    ``alpha = source_features @ w3`` (one scalar per class, or one value per
    coordinate in ``vector`` mode):

    ``fused = source_features + alpha * A``

    Returns ``(fused [C, D], attended [C, D], gate)``.
    """
    g = check_matrix(as_tensor(source_features), "source_features")
    bank = as_tensor(bank_tensor)
    if bank.ndim != 3:
        raise ConfigInvalidError(f"bank must be [C, K, D], got {tuple(bank.shape)}")
    c, k, d = bank.shape
    if g.shape != (c, d):
        raise ConfigInvalidError(
            f"source features {tuple(g.shape)} incompatible with bank "
            f"{tuple(bank.shape)}"
        )
    if w1.shape[0] != d or w2.shape[0] != d or w1.shape[1] != w2.shape[1]:
        raise ConfigInvalidError(
            f"projection shapes {tuple(w1.shape)}, {tuple(w2.shape)} must be "
            f"[{d}, d_k] with matching d_k"
        )
    if scope not in {"per_class", "global"}:
        raise ConfigInvalidError(f"unknown scope {scope!r}")
    if gate_mode not in {"scalar", "vector"}:
        raise ConfigInvalidError(f"unknown gate_mode {gate_mode!r}")
    expected_w3 = (d, 1) if gate_mode == "scalar" else (d, d)
    if tuple(w3.shape) != expected_w3:
        raise ConfigInvalidError(
            f"gate weight must be {expected_w3} in {gate_mode} mode, "
            f"got {tuple(w3.shape)}"
        )

    d_k = w1.shape[1]
    queries = g @ w1  # [C, d_k]
    scale = 1.0 / math.sqrt(d_k)
    if scope == "per_class":
        keys = bank @ w2  # [C, K, d_k]
        scores = torch.einsum("cd,ckd->ck", queries, keys) * scale
        weights = torch.softmax(scores, dim=1)
        attended = torch.einsum("ck,ckd->cd", weights, bank)
    else:
        flat = bank.reshape(c * k, d)
        keys = flat @ w2  # [C*K, d_k]
        scores = queries @ keys.T * scale
        weights = torch.softmax(scores, dim=1)
        attended = weights @ flat

    gate = g @ w3  # [C, 1] or [C, D]
    fused = g + gate * attended
    return fused, attended, gate


class CrossAttentionFusion(torch.nn.Module):
    """Learnable weights for :func:`fuse_class_features`.

    The gate weight starts at zero so the fused features equal the source
    features exactly at initialization; adaptation departs from the source
    classifier rather than from noise.
    """

    def __init__(
        self,
        embed_dim: int,
        attention_dim: int | None = None,
        scope: str = "per_class",
        gate_mode: str = "scalar",
        seed: int = 0,
        dtype: torch.dtype = torch.float32,
    ) -> None:
        super().__init__()
        if embed_dim < 1:
            raise ConfigInvalidError("embed_dim must be positive")
        attention_dim = attention_dim or embed_dim
        if attention_dim < 1:
            raise ConfigInvalidError("attention_dim must be positive")
        if scope not in {"per_class", "global"}:
            raise ConfigInvalidError(f"unknown scope {scope!r}")
        if gate_mode not in {"scalar", "vector"}:
            raise ConfigInvalidError(f"unknown gate_mode {gate_mode!r}")
        self.scope = scope
        self.gate_mode = gate_mode
        generator = torch.Generator().manual_seed(seed)
        std = 1.0 / math.sqrt(embed_dim)

        def _init(rows: int, cols: int) -> torch.Tensor:
            weight = torch.empty(rows, cols, dtype=dtype)
            weight.normal_(mean=0.0, std=std, generator=generator)
            return weight

        self.W1 = torch.nn.Parameter(_init(embed_dim, attention_dim))
        self.W2 = torch.nn.Parameter(_init(embed_dim, attention_dim))
        gate_cols = 1 if gate_mode == "scalar" else embed_dim
        self.W3 = torch.nn.Parameter(torch.zeros(embed_dim, gate_cols, dtype=dtype))

    def forward(
        self, source_features: torch.Tensor, bank_tensor: torch.Tensor
    ) -> tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
        return fuse_class_features(
            source_features,
            bank_tensor,
            self.W1,
            self.W2,
            self.W3,
            scope=self.scope,
            gate_mode=self.gate_mode,
        )


def branch_logits(
    image_features: torch.Tensor,
    class_features: torch.Tensor,
    similarity: str = "cosine",
) -> torch.Tensor:
    """Per-class scores ``[B, C]`` for one branch (cosine by default)."""
    feats = check_matrix(as_tensor(image_features), "image_features")
    classes = check_matrix(as_tensor(class_features), "class_features")
    if feats.shape[1] != classes.shape[1]:
        raise ConfigInvalidError(
            f"feature width {feats.shape[1]} != class width {classes.shape[1]}"
        )
    if similarity == "cosine":
        feats = unit_normalize(feats, "image_features")
        classes = unit_normalize(classes, "class_features")
    elif similarity != "dot":
        raise ConfigInvalidError(f"unknown similarity {similarity!r}")
    return feats @ classes.T


transfer_branch_logits = branch_logits
target_branch_logits = branch_logits


@dataclass
class FusedPrediction:
    """Both branch scores plus the fused probability rows."""

    transfer_logits: torch.Tensor  # [B, C]
    target_logits: torch.Tensor  # [B, C]
    combined: torch.Tensor  # [B, C] pre-softmax
    probs: torch.Tensor  # [B, C]


def fused_prediction(
    transfer_logits: torch.Tensor,
    target_logits: torch.Tensor,
    alpha_fuse: float = 0.5,
    tau: float = 1.0,
) -> FusedPrediction:
    """Convex combination of branch scores, softmaxed at temperature ``tau``.

    ``alpha_fuse = 1`` reproduces the transfer branch alone; ``0`` the
    prompt branch alone.
    """
    if not 0.0 <= alpha_fuse <= 1.0:
        raise ConfigInvalidError(f"alpha_fuse must lie in [0, 1], got {alpha_fuse}")
    if tau <= 0:
        raise ConfigInvalidError(f"tau must be positive, got {tau}")
    lf = check_matrix(as_tensor(transfer_logits), "transfer_logits")
    lg = check_matrix(as_tensor(target_logits), "target_logits")
    if lf.shape != lg.shape:
        raise ConfigInvalidError(
            f"branch logit shapes differ: {tuple(lf.shape)} vs {tuple(lg.shape)}"
        )
    combined = (alpha_fuse * lf + (1.0 - alpha_fuse) * lg) / tau
    return FusedPrediction(
        transfer_logits=lf,
        target_logits=lg,
        combined=combined,
        probs=torch.softmax(combined, dim=1),
    )


class DualBranchModel(torch.nn.Module):
    """Everything trainable during adaptation, plus the frozen source features.

    Trainable state is exactly: the two attention projections and the gate
    (``W1``, ``W2``, ``W3``), the shared prompt tokens (``T_t``), and —
    unless ``bank_trainable=False`` — the feature bank (``W_e``). The source
    class-feature matrix is a buffer whose fingerprint is pinned at
    construction so any mutation is detectable.
    """

    def __init__(
        self,
        source_features: ClassTextFeatureMatrix,
        bank_tensor: torch.Tensor,
        text_encoder,
        prompt_tokens: int = 16,
        attention_dim: int | None = None,
        attention_scope: str = "per_class",
        gate_mode: str = "scalar",
        bank_trainable: bool = True,
        alpha_fuse: float = 0.5,
        tau: float = 1.0,
        similarity: str = "cosine",
        token_init_std: float = 0.02,
        seed: int = 0,
    ) -> None:
        super().__init__()
        if not source_features.frozen:
            raise ConfigInvalidError(
                "source class features must be frozen before adaptation"
            )
        if not 0.0 <= alpha_fuse <= 1.0:
            raise ConfigInvalidError("alpha_fuse must lie in [0, 1]")
        if tau <= 0:
            raise ConfigInvalidError("tau must be positive")
        if prompt_tokens < 1:
            raise ConfigInvalidError("prompt_tokens must be >= 1")
        bank = as_tensor(bank_tensor)
        if bank.ndim != 3 or bank.shape[0] != source_features.num_classes:
            raise ConfigInvalidError(
                f"bank shape {tuple(bank.shape)} incompatible with "
                f"{source_features.num_classes} classes"
            )
        if bank.shape[2] != source_features.embed_dim:
            raise ConfigInvalidError(
                f"bank width {bank.shape[2]} != class feature width "
                f"{source_features.embed_dim}"
            )

        self.class_names = source_features.class_names
        self.alpha_fuse = alpha_fuse
        self.tau = tau
        self.similarity = similarity
        self._text_encoder = text_encoder

        dtype = source_features.features.dtype
        self.register_buffer("G_S", source_features.features.detach().clone())
        self.source_hash = tensor_fingerprint(self.G_S)

        self.attention = CrossAttentionFusion(
            embed_dim=source_features.embed_dim,
            attention_dim=attention_dim,
            scope=attention_scope,
            gate_mode=gate_mode,
            seed=seed,
            dtype=dtype,
        )

        generator = torch.Generator().manual_seed(seed + 1)
        tokens = torch.empty(prompt_tokens, text_encoder.token_dim, dtype=dtype)
        tokens.normal_(mean=0.0, std=token_init_std, generator=generator)
        self.T_t = torch.nn.Parameter(tokens)
        anchors = torch.stack(
            [
                text_encoder.class_anchor_token(c)
                for c in range(source_features.num_classes)
            ]
        ).to(dtype)
        self.register_buffer("class_anchor_tokens", anchors)

        if bank_trainable:
            self.W_e = torch.nn.Parameter(bank.detach().clone())
        else:
            self.register_buffer("W_e", bank.detach().clone())

    @property
    def num_classes(self) -> int:
        return self.G_S.shape[0]

    def fused_class_features(self) -> torch.Tensor:
        fused, _, _ = self.attention(self.G_S, self.W_e)
        return fused

    def target_class_features(self) -> torch.Tensor:
        """Prompt-branch class features: shared tokens + per-class anchor."""
        shared = self.T_t.unsqueeze(0).expand(self.num_classes, -1, -1)
        sequences = torch.cat([shared, self.class_anchor_tokens.unsqueeze(1)], dim=1)
        return self._text_encoder.encode_token_batch(sequences)

    def forward(self, image_features: torch.Tensor) -> FusedPrediction:
        lf = branch_logits(
            image_features, self.fused_class_features(), self.similarity
        )
        lg = branch_logits(
            image_features, self.target_class_features(), self.similarity
        )
        return fused_prediction(lf, lg, alpha_fuse=self.alpha_fuse, tau=self.tau)

    def predict_probs(self, image_features: torch.Tensor) -> torch.Tensor:
        with torch.no_grad():
            return self.forward(image_features).probs

    def trainable_registry(self) -> dict[str, tuple[int, ...]]:
        """Canonical name -> shape for every parameter receiving gradients."""
        rename = {"attention.W1": "W1", "attention.W2": "W2", "attention.W3": "W3"}
        registry = {}
        for name, param in self.named_parameters():
            if param.requires_grad:
                registry[rename.get(name, name)] = tuple(param.shape)
        return registry

    def verify_source_integrity(self) -> None:
        """Raise if the frozen source class features changed since init."""
        current = tensor_fingerprint(self.G_S)
        if current != self.source_hash:
            raise ChecksumMismatchError(
                "frozen source class features were modified during adaptation "
                f"(expected {self.source_hash[:12]}..., got {current[:12]}...)"
            )

    def checkpoint_payload(self) -> dict:
        return {
            "state_dict": {k: v.detach().clone() for k, v in self.state_dict().items()},
            "source_hash": self.source_hash,
            "class_names": list(self.class_names),
            "alpha_fuse": self.alpha_fuse,
            "tau": self.tau,
            "similarity": self.similarity,
            "attention_scope": self.attention.scope,
            "gate_mode": self.attention.gate_mode,
        }

    def load_checkpoint_payload(self, payload: dict) -> None:
        state = payload["state_dict"]
        loaded_hash = tensor_fingerprint(state["G_S"])
        if loaded_hash != payload["source_hash"]:
            raise ChecksumMismatchError(
                "checkpoint source-feature hash does not match its contents"
            )
        if payload["source_hash"] != self.source_hash:
            raise ChecksumMismatchError(
                "checkpoint was trained from different source class features "
                f"(expected {self.source_hash[:12]}..., "
                f"checkpoint has {payload['source_hash'][:12]}...)"
            )
        self.load_state_dict(state)
        self.verify_source_integrity()
