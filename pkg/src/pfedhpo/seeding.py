"""Deterministic derivation of independent random streams.

Every stochastic component draws from a stream keyed by
``(master seed, label, *indices)``. Labels are hashed with SHA-256 so the
mapping is stable across Python processes (``hash()`` is salted).
"""

from __future__ import annotations

import hashlib

import numpy as np


def label_key(label: str) -> int:
    digest = hashlib.sha256(label.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little")


def derive_seed_sequence(seed: int, label: str, *index: int) -> np.random.SeedSequence:
    if seed < 0 or any(i < 0 for i in index):
        raise ValueError("seed and indices must be non-negative")
    return np.random.SeedSequence([int(seed), label_key(label), len(index), *map(int, index)])


def derive_rng(seed: int, label: str, *index: int) -> np.random.Generator:
    """Return a fresh generator for the stream ``(seed, label, *index)``."""
    return np.random.Generator(np.random.PCG64(derive_seed_sequence(seed, label, *index)))


def derive_int(seed: int, label: str, *index: int) -> int:
    """A 63-bit integer seed for sub-components that take plain int seeds."""
    return int(derive_seed_sequence(seed, label, *index).generate_state(2, np.uint64)[0] >> np.uint64(1))
