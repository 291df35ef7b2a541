"""Deterministic, splittable random streams.

Every stochastic operation in the package draws from a Philox counter-based
generator keyed by an integer seed plus a path of integer tags. Streams for
different paths are statistically independent and do not depend on the order
in which they are created, so per-frame / per-screen / per-mode draws stay
reproducible under any execution schedule.
"""

from __future__ import annotations

import numpy as np

# Stream tags. Keep values stable: changing them changes every seeded output.
TAG_SCREEN = 1
TAG_OCCLUSION = 2
TAG_FRAME = 3
TAG_COEFF = 4
TAG_TRIAL = 5


def substream(seed: int, *path: int) -> np.random.Generator:
    """Return an independent generator for (seed, *path)."""
    ss = np.random.SeedSequence((int(seed),) + tuple(int(p) for p in path))
    return np.random.Generator(np.random.Philox(ss))


def child_seed(seed: int, *path: int) -> int:
    """Derive an integer seed for a nested component from (seed, *path)."""
    ss = np.random.SeedSequence((int(seed),) + tuple(int(p) for p in path))
    return int(ss.generate_state(1, dtype=np.uint64)[0])
