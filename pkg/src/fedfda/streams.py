"""Deterministic RNG stream derivation.

Every stochastic call in the simulator draws from a generator keyed by
(master seed, purpose tag, round, client). Streams are independent of
scheduling, so client updates may run on any number of worker threads
without changing a single drawn number.
"""

from __future__ import annotations

import hashlib

import numpy as np


def _tag_key(tag: str) -> int:
    digest = hashlib.blake2b(tag.encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "big")


def substream(master_seed: int, tag: str, round_idx: int = 0, client_id: int = 0) -> np.random.Generator:
    """Generator for one (seed, purpose, round, client) slot."""
    if master_seed < 0:
        raise ValueError("master_seed must be nonnegative")
    if round_idx < 0 or client_id < 0:
        raise ValueError("round_idx and client_id must be nonnegative")
    seq = np.random.SeedSequence((master_seed, _tag_key(tag), round_idx, client_id))
    return np.random.default_rng(seq)
