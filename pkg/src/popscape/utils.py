"""Small shared helpers."""

from __future__ import annotations

import hashlib

import numpy as np


def derive_seed(*parts) -> int:
    """Stable 64-bit seed from a tuple of labels.

    Uses a keyed hash rather than Python's salted ``hash`` so that derived
    seeds are identical across processes and runs; this is what makes
    parallel fitness evaluation schedule-independent.
    """
    text = "/".join(str(p) for p in parts)
    digest = hashlib.blake2b(text.encode(), digest_size=8).digest()
    return int.from_bytes(digest, "little")


def array_digest(a: np.ndarray) -> str:
    """Short stable digest of an array's contents."""
    h = hashlib.blake2b(digest_size=8)
    h.update(np.ascontiguousarray(a).tobytes())
    return h.hexdigest()
