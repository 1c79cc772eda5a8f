"""Seeded random streams.

Every stochastic component draws from ``numpy.random.Generator`` backed by
the PCG64 bit generator. Streams are derived from a root seed plus a tuple of
integer keys through ``SeedSequence``, so independent consumers (dataset
records, weight initialisation, dropout, SPSA perturbations, data order)
never share state and do not shift each other when one of them draws more.
"""

from __future__ import annotations

import numpy as np

# stream keys; values are arbitrary but frozen
INIT_FRONTEND = 1
INIT_HEAD = 2
SHUFFLE = 3
DROPOUT = 4
SPSA = 5
SPLIT = 6


def stream(seed: int, *keys: int) -> np.random.Generator:
    """Return an independent PCG64 generator for ``(seed, *keys)``."""
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence([int(seed), *map(int, keys)])))


def derive_seed(seed: int, *keys: int) -> int:
    """Derive a single unsigned 64-bit seed for ``(seed, *keys)``."""
    ss = np.random.SeedSequence([int(seed), *map(int, keys)])
    return int(ss.generate_state(1, np.uint64)[0])
