"""Unsupervised target objective: pseudo-label CE + consistency + info-max.

All three terms operate on fused probability rows. The consistency term is
FixMatch-shaped: a confidently classified weak view supervises the strong
view of the same sample, with the weak side detached. The information
maximization term rewards confident-yet-diverse predictions and is bounded
in ``[-log C, log C]``.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch

from .errors import ConfigInvalidError, NonFiniteLossError
from .validation import as_tensor, check_matrix, check_prob_matrix

_LOG_EPS = 1e-12


def augment_weak(
    features: torch.Tensor, sigma: float = 0.01, generator: torch.Generator | None = None
) -> torch.Tensor:
    """Weak embedding-space view: small isotropic Gaussian jitter."""
    feats = check_matrix(as_tensor(features), "features")
    if sigma < 0:
        raise ConfigInvalidError("sigma must be >= 0")
    if sigma == 0:
        return feats.clone()
    noise = torch.empty_like(feats).normal_(mean=0.0, std=sigma, generator=generator)
    return feats + noise


def augment_strong(
    features: torch.Tensor,
    sigma: float = 0.1,
    dropout: float = 0.1,
    generator: torch.Generator | None = None,
) -> torch.Tensor:
    """Strong view: larger jitter plus random coordinate dropout."""
    feats = check_matrix(as_tensor(features), "features")
    if sigma < 0:
        raise ConfigInvalidError("sigma must be >= 0")
    if not 0.0 <= dropout < 1.0:
        raise ConfigInvalidError("dropout must lie in [0, 1)")
    noise = torch.empty_like(feats).normal_(mean=0.0, std=sigma, generator=generator)
    out = feats + noise
    if dropout > 0:
        keep = (
            torch.empty_like(feats).uniform_(0.0, 1.0, generator=generator) >= dropout
        )
        out = out * keep
    return out


def pseudo_label_ce(probs: torch.Tensor, pseudo_labels: torch.Tensor) -> torch.Tensor:
    """Mean negative log-probability of each sample's pseudo-class."""
    probs = check_prob_matrix(as_tensor(probs), "probs")
    labels = as_tensor(pseudo_labels, dtype=torch.long)
    if labels.ndim != 1 or labels.shape[0] != probs.shape[0]:
        raise ConfigInvalidError(
            f"pseudo_labels must be [B] matching probs rows, got "
            f"{tuple(labels.shape)} vs {tuple(probs.shape)}"
        )
    if labels.numel() and (labels.min() < 0 or labels.max() >= probs.shape[1]):
        raise ConfigInvalidError("pseudo label out of class range")
    picked = probs[torch.arange(probs.shape[0]), labels]
    return -torch.log(picked + _LOG_EPS).mean()


def consistency_loss(
    weak_probs: torch.Tensor,
    strong_probs: torch.Tensor,
    theta: float = 0.95,
) -> tuple[torch.Tensor, float]:
    """Confident weak views supervise strong views of the same samples.

    The weak side is detached: it only produces masks and hard labels. The
    sum of masked CE terms is divided by the full batch size, so a batch
    with no confident sample contributes an exact zero. Returns
    ``(loss, masked_fraction)``.
    """
    weak = check_prob_matrix(as_tensor(weak_probs), "weak_probs").detach()
    strong = check_prob_matrix(as_tensor(strong_probs), "strong_probs")
    if weak.shape != strong.shape:
        raise ConfigInvalidError(
            f"weak/strong shapes differ: {tuple(weak.shape)} vs {tuple(strong.shape)}"
        )
    if not 0.0 < theta <= 1.0:
        raise ConfigInvalidError(f"theta must lie in (0, 1], got {theta}")
    confidence, hard_labels = weak.max(dim=1)
    mask = (confidence >= theta).to(strong.dtype)
    batch = strong.shape[0]
    picked = strong[torch.arange(batch), hard_labels]
    loss = (mask * -torch.log(picked + _LOG_EPS)).sum() / batch
    return loss, float(mask.mean())


def information_maximization_loss(probs: torch.Tensor) -> torch.Tensor:
    """Mean per-sample entropy minus entropy of the batch-mean prediction.

    Zero for uniform rows and for total collapse onto one class; minimized
    at ``-log C`` when every row is one-hot and classes are used evenly.
    """
    probs = check_prob_matrix(as_tensor(probs), "probs")

    def entropy(p: torch.Tensor) -> torch.Tensor:
        return -(p * torch.log(p + _LOG_EPS)).sum(dim=-1)

    instance = entropy(probs).mean()
    marginal = entropy(probs.mean(dim=0))
    return instance - marginal


@dataclass
class LossBreakdown:
    """The target objective split into its terms (disabled terms are zero)."""

    pseudo_ce: torch.Tensor
    consistency: torch.Tensor
    info_max: torch.Tensor
    total: torch.Tensor
    masked_fraction: float

    def as_floats(self) -> dict[str, float]:
        return {
            "pseudo_ce": float(self.pseudo_ce.detach()),
            "consistency": float(self.consistency.detach()),
            "info_max": float(self.info_max.detach()),
            "total": float(self.total.detach()),
            "masked_fraction": self.masked_fraction,
        }


def total_loss(
    ce_probs: torch.Tensor | None,
    pseudo_labels: torch.Tensor | None,
    weak_probs: torch.Tensor | None,
    strong_probs: torch.Tensor | None,
    im_probs: torch.Tensor | None,
    theta: float = 0.95,
    use_pseudo_ce: bool = True,
    use_consistency: bool = True,
    use_info_max: bool = True,
) -> LossBreakdown:
    """Unweighted sum of the enabled terms.

    ``ce_probs`` are fused probabilities of high-confidence samples under
    the weak view; ``weak_probs``/``strong_probs`` are the two views of the
    consistency batch; ``im_probs`` are the rows the diversity term sees.
    """
    zero = torch.zeros(())
    pseudo = zero
    if use_pseudo_ce:
        if ce_probs is None or pseudo_labels is None:
            raise ConfigInvalidError("pseudo-label CE enabled but inputs missing")
        pseudo = pseudo_label_ce(ce_probs, pseudo_labels)
    consistency = zero
    masked_fraction = 0.0
    if use_consistency:
        if weak_probs is None or strong_probs is None:
            raise ConfigInvalidError("consistency enabled but views missing")
        consistency, masked_fraction = consistency_loss(weak_probs, strong_probs, theta)
    info = zero
    if use_info_max:
        if im_probs is None:
            raise ConfigInvalidError("information maximization enabled but probs missing")
        info = information_maximization_loss(im_probs)
    total = pseudo + consistency + info
    if not torch.isfinite(total):
        raise NonFiniteLossError(
            f"target objective is not finite: ce={float(pseudo)}, "
            f"consistency={float(consistency)}, im={float(info)}"
        )
    return LossBreakdown(
        pseudo_ce=pseudo,
        consistency=consistency,
        info_max=info,
        total=total,
        masked_fraction=masked_fraction,
    )
