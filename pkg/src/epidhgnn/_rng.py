"""Named random sub-streams derived from a single integer seed."""

import zlib

import numpy as np

STREAMS = ("population", "mobility", "contact", "pathogen", "init", "sampling", "split")


def substream(seed: int, name: str, *extra: int) -> np.random.Generator:
    """Return an independent generator for ``(seed, name, *extra)``.

    The name is hashed with crc32 so the mapping is stable across processes
    (the builtin ``hash`` is salted per interpreter).
    """
    key = [int(seed) & 0xFFFFFFFF, zlib.crc32(name.encode()), *(int(e) & 0xFFFFFFFF for e in extra)]
    return np.random.default_rng(np.random.SeedSequence(key))
