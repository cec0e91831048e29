"""Counter-based random streams keyed on (seed, purpose tag).

Every random draw in the toolkit comes from a Philox generator whose key
combines the user seed with a hash of a purpose string. Streams for
different purposes are statistically independent, so e.g. changing the
averaging scheme or window never changes the dataset or the shuffles.
"""

from __future__ import annotations

import hashlib

import numpy as np


def _tag_hash(tag: str) -> int:
    digest = hashlib.blake2b(tag.encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "little")


def rng_for(seed: int, tag: str) -> np.random.Generator:
    """Deterministic generator for one (seed, purpose) pair."""
    key = np.array([seed & 0xFFFFFFFFFFFFFFFF, _tag_hash(tag)], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))
