"""Deterministic counter-based random streams.

Every stochastic component in the package draws from a Philox
(counter-based) generator keyed by a user seed plus a short integer
path, e.g. ``stream(seed, STEP_DRAWS, step, chunk)``.  A stream's
output depends only on its key, never on scheduling, so splitting work
across any number of threads reproduces the single-threaded draws
bit for bit.
"""

from __future__ import annotations

import numpy as np

_MASK64 = (1 << 64) - 1

# Stream namespaces (first path element). Keeping them distinct guarantees
# independent draws for the different consumers of one seed.
HYPOTHESIS_DRAWS = 0
STEP_DRAWS = 1
HUMAN_PREFIX = 2
SIM_HUMAN = 3
SIM_OBSERVE = 4
MPPI_NOISE = 5


def stream(seed: int, *path: int) -> np.random.Generator:
    """Return the generator for the stream identified by ``seed`` and ``path``."""
    key = tuple(int(p) & 0xFFFFFFFF for p in path)
    ss = np.random.SeedSequence(entropy=int(seed) & _MASK64, spawn_key=key)
    return np.random.Generator(np.random.Philox(ss))


def derive_seed(seed: int, *path: int) -> int:
    """Fold ``path`` into ``seed`` to obtain an independent 64-bit sub-seed."""
    key = tuple(int(p) & 0xFFFFFFFF for p in path)
    ss = np.random.SeedSequence(entropy=int(seed) & _MASK64, spawn_key=key)
    state = ss.generate_state(2, dtype=np.uint64)
    return int(state[0] ^ state[1])


def chunk_ranges(n: int, chunk: int):
    """Yield ``(start, stop, chunk_index)`` covering ``range(n)`` in fixed chunks."""
    index = 0
    for start in range(0, n, chunk):
        yield start, min(start + chunk, n), index
        index += 1
