"""Shared plumbing: named RNG substreams and small text helpers."""

from __future__ import annotations

import hashlib

import numpy as np


def substream(seed: int, *names) -> np.random.Generator:
    """Deterministic generator for (seed, names), stable across runs.

    Every piece of randomness in the package flows from one user seed
    through these named streams, so modules cannot perturb each other's
    draws when the call order changes.
    """
    digest = hashlib.sha256("/".join(str(n) for n in names).encode()).digest()
    words = np.frombuffer(digest[:16], dtype=np.uint32)
    return np.random.default_rng([abs(int(seed)), *[int(w) for w in words]])
