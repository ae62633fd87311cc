"""Input validation helpers shared across modules.

All helpers accept numpy arrays or torch tensors and raise library error
types rather than bare ``ValueError`` so callers can rely on one error
taxonomy at every entry point.
"""

from __future__ import annotations

import numpy as np
import torch

from .errors import ShapeMismatchError, ZeroNormFeatureError

# Norms below this are treated as zero when normalizing.
ZERO_NORM_TOL = 1e-12


def as_tensor(x, dtype: torch.dtype | None = None) -> torch.Tensor:
    """Convert array-like input to a torch tensor without copying when possible."""
    if isinstance(x, torch.Tensor):
        return x.to(dtype) if dtype is not None and x.dtype != dtype else x
    t = torch.as_tensor(np.asarray(x))
    if dtype is not None:
        t = t.to(dtype)
    return t


def check_matrix(x, name: str, *, cols: int | None = None) -> torch.Tensor:
    """Require a 2-D array; optionally pin the number of columns."""
    t = as_tensor(x)
    if t.ndim != 2:
        raise ShapeMismatchError(f"{name} must be 2-D, got shape {tuple(t.shape)}")
    if cols is not None and t.shape[1] != cols:
        raise ShapeMismatchError(
            f"{name} must have {cols} columns, got {t.shape[1]}"
        )
    return t


def check_same_shape(a, b, name_a: str, name_b: str) -> None:
    ta, tb = as_tensor(a), as_tensor(b)
    if tuple(ta.shape) != tuple(tb.shape):
        raise ShapeMismatchError(
            f"{name_a} shape {tuple(ta.shape)} != {name_b} shape {tuple(tb.shape)}"
        )


def check_no_zero_rows(x, name: str) -> torch.Tensor:
    """Reject rows that cannot be unit-normalized."""
    t = check_matrix(x, name)
    norms = torch.linalg.vector_norm(t.detach(), dim=-1)
    if bool((norms < ZERO_NORM_TOL).any()):
        bad = torch.nonzero(norms < ZERO_NORM_TOL).flatten().tolist()
        raise ZeroNormFeatureError(f"{name} has zero-norm rows at indices {bad}")
    return t


def check_prob_matrix(x, name: str, *, atol: float = 1e-5) -> torch.Tensor:
    """Require rows that are valid probability distributions."""
    t = check_matrix(x, name)
    row_sums = t.detach().sum(dim=-1)
    if not bool(torch.isfinite(t.detach()).all()):
        raise ShapeMismatchError(f"{name} contains non-finite entries")
    if bool((t.detach() < -atol).any()) or bool(
        (row_sums - 1.0).abs().max() > atol
    ):
        raise ShapeMismatchError(f"{name} rows must be probability distributions")
    return t


def check_one_hot(x, name: str) -> torch.Tensor:
    """Require a one-hot matrix (rows with a single 1 and zeros elsewhere)."""
    t = check_matrix(x, name)
    td = t.detach()
    is_binary = bool(((td == 0) | (td == 1)).all())
    if not is_binary or not bool((td.sum(dim=-1) == 1).all()):
        raise ShapeMismatchError(f"{name} must be one-hot encoded")
    return t


def unit_normalize(x: torch.Tensor, name: str = "features") -> torch.Tensor:
    """L2-normalize rows, raising on zero-norm input (gradient-safe)."""
    check_no_zero_rows(x.reshape(-1, x.shape[-1]), name)
    return x / torch.linalg.vector_norm(x, dim=-1, keepdim=True)
