"""Seeded random streams.

Every consumer of randomness asks an :class:`RngState` for a stream named by
purpose.  Streams are PCG64 generators keyed by ``(seed, purpose)`` through
numpy's ``SeedSequence``, so drawing from one stream never shifts another and
the same seed reproduces the same values on every platform numpy supports.
"""

from __future__ import annotations

import numpy as np

PURPOSES = {
    "init": 0,
    "data": 1,
    "shuffle": 2,
    "split": 3,
    "check": 4,
}


class RngState:
    def __init__(self, seed: int):
        if not 0 <= int(seed) < 2**64:
            raise ValueError(f"seed must fit in 64 unsigned bits, got {seed}")
        self.seed = int(seed)

    def stream(self, purpose: str) -> np.random.Generator:
        """Fresh generator for ``purpose``; calling twice restarts the stream."""
        try:
            key = PURPOSES[purpose]
        except KeyError:
            raise ValueError(f"unknown rng purpose {purpose!r}; expected one of {sorted(PURPOSES)}") from None
        seq = np.random.SeedSequence(entropy=self.seed, spawn_key=(key,))
        return np.random.Generator(np.random.PCG64(seq))

    def __repr__(self) -> str:
        return f"RngState(seed={self.seed})"
