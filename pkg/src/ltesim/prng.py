"""Deterministic random streams derived from a single scenario seed.

Every stochastic choice in a run (RNTI draws, TMSI draws, challenge
material, timer jitter) pulls from a child stream named by a stable
path, so two runs with the same scenario and seed make identical
choices regardless of component construction order.
"""

from __future__ import annotations

import hashlib
import random


def child_seed(master_seed: int, path: str) -> int:
    """Derive a child seed for `path` from the master seed."""
    digest = hashlib.sha256(f"{master_seed}/{path}".encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "big")


def child_rng(master_seed: int, path: str) -> random.Random:
    """A fresh random.Random seeded for `path`."""
    return random.Random(child_seed(master_seed, path))
