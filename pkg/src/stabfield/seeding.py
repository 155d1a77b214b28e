"""Counter-based random streams.

Every random draw in the package comes from a generator keyed by
``(base_seed, replicate_index, stream_tag)``, so a replicate's randomness
does not depend on which worker runs it or in what order.
"""

from __future__ import annotations

import zlib

import numpy as np

__all__ = ["derive", "stream", "tag_id"]


def tag_id(tag: str) -> int:
    return zlib.crc32(tag.encode("utf-8"))


def stream(seed: int, index: int = 0, tag: str = "main") -> np.random.Generator:
    """Philox generator for one (seed, index, tag) triple."""
    if seed < 0 or index < 0:
        raise ValueError("seed and index must be non-negative")
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=(int(index), tag_id(tag)))
    return np.random.Generator(np.random.Philox(ss))


def derive(seed: int, index: int, tag: str) -> int:
    """A 63-bit child seed, for handing a sub-task its own seed space."""
    return int(stream(seed, index, tag).integers(0, 2**63 - 1))
