"""
Named random substreams derived from a single integer seed
"""

import zlib

import numpy as np


def substream(seed: int, name: str, *extra: int) -> np.random.Generator:
    """
    Return a generator for the named substream of ``seed``.

    Streams with different names (or extra keys) are statistically independent
    and stable across runs and platforms.

    Example:
        >>> rng = substream(7, "init")
        >>> cell_rng = substream(7, "select_k", 2, 3)
    """
    key = (zlib.crc32(name.encode("utf-8")),) + tuple(int(e) for e in extra)
    return np.random.default_rng(np.random.SeedSequence(entropy=int(seed), spawn_key=key))
