"""Seeded random streams.

Every random draw in the package comes from ``generator(seed, *path)``: a
Philox counter-based generator keyed by the run seed plus a stream path such
as ``("shuffle", epoch)``.  Independent streams never share state, so adding
a draw in one place does not shift any other sequence.
"""
from __future__ import annotations

import zlib

import numpy as np


def _word(part) -> int:
    if isinstance(part, (int, np.integer)):
        return int(part) & 0xFFFFFFFF
    return zlib.crc32(str(part).encode())


def generator(seed: int, *path) -> np.random.Generator:
    seed = int(seed)
    entropy = [seed & 0xFFFFFFFF, (seed >> 32) & 0xFFFFFFFF] + [_word(p) for p in path]
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(entropy)))
