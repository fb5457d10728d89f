"""Seed-stream plumbing.

Every random draw in a simulation comes from a generator keyed by
``(master seed, purpose, round, client)``.  Streams never share state, so the
order in which clients are processed (or whether they run in parallel) cannot
change any draw.
"""

from __future__ import annotations

import numpy as np

DATA = 1
PARTITION = 2
SCALES = 3
SELECT = 4
STALENESS = 5
DELAY = 6
LOCAL = 7
TRIAL = 8


def stream(seed: int, purpose: int, *keys: int) -> np.random.Generator:
    """Return an independent generator for ``(seed, purpose, *keys)``."""
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=(int(purpose),) + tuple(int(k) for k in keys))
    return np.random.default_rng(ss)
