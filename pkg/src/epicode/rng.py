"""Deterministic random streams.

Every stochastic component in the package draws from a counter-based Philox
generator keyed by ``(seed, *path)`` through ``numpy.random.SeedSequence``.
Distinct paths give statistically independent streams, and a stream's output
depends only on its key, never on scheduling or worker count.
"""

from __future__ import annotations

import numpy as np


def substream(seed: int, *path: int) -> np.random.Generator:
    """Return the generator for the stream keyed by (seed, *path)."""
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=tuple(int(p) for p in path))
    return np.random.Generator(np.random.Philox(ss))
