"""Seed derivation so every stage draws from its own stream.

Child seeds are derived by hashing ``(parent_seed, tag)``; consuming random
values in one stage never perturbs another.
"""
from __future__ import annotations

import hashlib

import numpy as np

SEED_MASK = (1 << 64) - 1


def derive_seed(seed: int, tag: str) -> int:
    # never use the builtin hash(), it is salted per process
    digest = hashlib.sha256(f"{int(seed) & SEED_MASK}:{tag}".encode()).digest()
    return int.from_bytes(digest[:8], "big")


def derive_rng(seed: int, tag: str) -> np.random.Generator:
    return np.random.default_rng(derive_seed(seed, tag))
