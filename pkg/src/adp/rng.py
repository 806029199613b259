"""Seeded randomness streams.

All nondeterminism in the plane (prices, research, trace ids, credential
tokens) is drawn from named streams derived from the scenario seed, so two
runs with the same seed are byte-identical while distinct subsystems stay
statistically independent of one another.
"""
from __future__ import annotations

import hashlib
import random


def derive_seed(seed: int, label: str) -> int:
    digest = hashlib.sha256(f"{seed}:{label}".encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "big")


def derive_rng(seed: int, label: str) -> random.Random:
    return random.Random(derive_seed(seed, label))
