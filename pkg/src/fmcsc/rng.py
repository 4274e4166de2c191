"""Named random streams derived from one master seed.

Streams are keyed by a path of names, so adding a client or a purpose never
shifts the draws of unrelated streams.
"""

from __future__ import annotations

import zlib

import numpy as np


def _key(part: object) -> int:
    return zlib.crc32(str(part).encode("utf-8"))


def stream(seed: int, *names: object) -> np.random.Generator:
    """Return an independent generator for ``(seed, *names)``."""
    seq = np.random.SeedSequence(entropy=int(seed), spawn_key=tuple(_key(n) for n in names))
    return np.random.default_rng(seq)
