"""Deterministic random streams.

Every stochastic routine derives its generator from a root seed plus a string
path, backed by counter-based Philox. Streams are independent of each other
and of execution order, so adding parallelism or reordering experiment trials
never changes the numbers a given (seed, path) pair produces.
"""

import hashlib

import numpy as np

_MASK64 = (1 << 64) - 1


def stream(root_seed: int, *path: str) -> np.random.Generator:
    """Return the generator for a (root seed, path) pair."""
    digest = hashlib.sha256("/".join(path).encode("utf-8")).digest()
    label = int.from_bytes(digest[:8], "little")
    key = np.array([root_seed & _MASK64, label], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))
