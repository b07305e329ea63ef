"""Deterministic derivation of independent per-vehicle random streams.

Seeds are derived from a root seed plus string tokens (vehicle ids, stage
names) through SHA-256, so a vehicle's stream never depends on how many other
vehicles exist or in which order they are processed.
"""
from __future__ import annotations

import hashlib

import numpy as np


def derive_seed(root_seed: int, *tokens) -> np.random.SeedSequence:
    """Build a SeedSequence from ``root_seed`` and any number of string tokens.

    Stable across runs, platforms, and process boundaries (no reliance on
    ``hash()``). Identical inputs always yield an identical stream.
    """
    entropy = [int(root_seed)]
    for tok in tokens:
        digest = hashlib.sha256(str(tok).encode("utf-8")).digest()
        entropy.append(int.from_bytes(digest[:8], "little"))
    return np.random.SeedSequence(entropy)


def derive_rng(root_seed: int, *tokens) -> np.random.Generator:
    """Generator seeded by :func:`derive_seed`."""
    return np.random.default_rng(derive_seed(root_seed, *tokens))
