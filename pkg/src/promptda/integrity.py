"""Content hashing for frozen assets.

Frozen tensors (encoder weights, source class features) are fingerprinted
before adaptation starts and re-verified while it runs; a hash change means
something wrote into an asset that must stay immutable.
"""

from __future__ import annotations

import hashlib
from typing import Iterable, Mapping

import numpy as np
import torch

from .errors import ChecksumMismatchError


def tensor_fingerprint(*tensors: torch.Tensor | np.ndarray) -> str:
    """sha256 over the raw bytes, shapes and dtypes of the given arrays."""
    h = hashlib.sha256()
    for t in tensors:
        a = t.detach().cpu().numpy() if isinstance(t, torch.Tensor) else np.asarray(t)
        h.update(str(a.dtype).encode())
        h.update(str(a.shape).encode())
        h.update(np.ascontiguousarray(a).tobytes())
    return h.hexdigest()


def state_fingerprint(state: Mapping[str, torch.Tensor]) -> str:
    """Fingerprint a named tensor mapping in sorted-key order."""
    h = hashlib.sha256()
    for key in sorted(state):
        h.update(key.encode())
        h.update(tensor_fingerprint(state[key]).encode())
    return h.hexdigest()


def verify_fingerprint(expected: str, *tensors, what: str = "asset") -> None:
    actual = tensor_fingerprint(*tensors)
    if actual != expected:
        raise ChecksumMismatchError(
            f"{what} changed: expected hash {expected[:12]}..., got {actual[:12]}..."
        )


def fingerprints_equal(items: Iterable[str]) -> bool:
    seen = set(items)
    return len(seen) <= 1
