"""Seeded, counter-based random streams.

Every per-image stream is derived from ``(run seed, *keys)`` alone, so work
can be scheduled in any order without changing the draws.
"""

import numpy as np


def random_stream(seed, *keys):
    """Philox generator for ``seed`` and an optional child key path."""
    ss = np.random.SeedSequence(int(seed), spawn_key=tuple(int(k) for k in keys))
    return np.random.Generator(np.random.Philox(ss))
