"""Named random streams derived from a single master seed.

Every source of randomness in a run pulls its generator from here, keyed by a
stream name like ``"client.3.dropout"``. Identical (master_seed, name) pairs
yield identical streams on every platform, which is what makes whole runs
byte-reproducible.
"""

from __future__ import annotations

import hashlib

import numpy as np


def derive_seed(master_seed: int, stream: str) -> int:
    digest = hashlib.sha256(f"{master_seed}|{stream}".encode("utf-8")).digest()
    return int.from_bytes(digest[:16], "little")


def stream_rng(master_seed: int, stream: str) -> np.random.Generator:
    """Generator for a named stream, independent of all other streams."""
    return np.random.default_rng(derive_seed(master_seed, stream))
