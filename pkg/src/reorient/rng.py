"""Named deterministic random streams.

Every stochastic component draws from its own substream so that adding or
reordering draws in one component never perturbs another.  Streams are
derived from a root seed plus a tuple of names hashed into a spawn key;
the same (seed, names) pair always yields the same generator.
"""

from __future__ import annotations

import zlib

import numpy as np


def stream(seed, *names):
    """Return a Generator for the substream identified by ``names``.

    ``names`` may be strings or ints; they are hashed (CRC-32, stable across
    platforms and runs) into a SeedSequence spawn key.
    """
    if not names:
        return np.random.default_rng(np.random.SeedSequence(int(seed)))
    key = tuple(zlib.crc32(str(n).encode("utf-8")) for n in names)
    return np.random.default_rng(np.random.SeedSequence(int(seed), spawn_key=key))
