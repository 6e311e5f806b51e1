"""Counter-based random streams.

Every consumer of randomness asks for a stream by key, e.g.
``stream(seed, step, Purpose.SURFACE)``. Streams are Philox generators seeded
from a :class:`numpy.random.SeedSequence` whose spawn key is the tuple of
integer keys, so two different keys never share state and the result does not
depend on the order in which streams are requested.
"""

from __future__ import annotations

import enum

import numpy as np


class Purpose(enum.IntEnum):
    SURFACE = 0
    OUTGOING = 1
    INCIDENT = 2
    CAMERA = 3
    PATH = 4
    INIT = 5
    RHS = 6
    VERIFY = 7


def stream(seed: int, *keys: int) -> np.random.Generator:
    keys = tuple(int(k) for k in keys)
    if any(k < 0 for k in keys):
        raise ValueError(f"stream keys must be non-negative, got {keys}")
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=keys)
    return np.random.Generator(np.random.Philox(ss))
