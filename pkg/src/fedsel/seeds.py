"""Named seed streams.

Every random draw in the package flows through ``stream(root, *names)`` so
that runs are reproducible and each consumer (data generation, partitioning,
init, per-round policy draws, sketch matrices) gets an independent stream.
"""

from __future__ import annotations

import hashlib

import numpy as np


def seed_material(*tokens: object) -> int:
    """Stable 64-bit integer derived from the token tuple."""
    text = "\x1f".join(str(t) for t in tokens)
    digest = hashlib.sha256(text.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little")


def stream(*tokens: object) -> np.random.Generator:
    """Deterministic generator for the named stream."""
    return np.random.default_rng(seed_material(*tokens))
