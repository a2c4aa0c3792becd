"""Seeded, splittable random streams.

Every public operation in the package takes an explicit
``numpy.random.Generator``.  Streams for parallel work units are derived
from ``(seed, index...)`` so results do not depend on thread count or
chunking order.
"""

from __future__ import annotations

import numpy as np


def stream(seed: int, *key: int) -> np.random.Generator:
    """Return the generator identified by ``seed`` and an optional index key."""
    return np.random.default_rng(np.random.SeedSequence((int(seed), *map(int, key))))
