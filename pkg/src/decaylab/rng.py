"""Seeded random streams.

Every Monte Carlo task draws from its own substream, keyed by the user seed
and a task identifier, so results do not depend on scheduling or thread count.
"""
import zlib

import numpy as np


def _key(part):
    if isinstance(part, (int, np.integer)):
        return int(part) & 0xFFFFFFFF
    return zlib.crc32(str(part).encode("utf-8"))


def substream(seed, *task) -> np.random.Generator:
    """Generator for (seed, task...). Same arguments give the same stream."""
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=tuple(_key(t) for t in task))
    return np.random.default_rng(ss)


def draw_symbols(rng, cum_p, size):
    """Symbols in {0..n-1} with cumulative probabilities cum_p (last entry 1)."""
    u = rng.random(size)
    return np.searchsorted(cum_p[:-1], u, side="right").astype(np.int16)
