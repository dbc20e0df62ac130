"""Counter-based random streams.

Every stream is a Philox generator keyed by (seed, purpose tag, two
sub-keys).  Distinct keys give statistically independent streams, and a
stream's output depends only on its key, never on how many other streams
were consumed or on thread scheduling.  That is what makes replica-level
parallelism bit-reproducible at any worker count.
"""

from __future__ import annotations

import numpy as np

# Purpose tags.  Adding a tag never perturbs existing streams.
PPP = 0          # point-process counts and positions
EVOLVE = 1       # per-slice Brownian increments
CONDITIONED = 2  # rejection-sampled confined paths
COUPLING = 3     # coupling construction coins and moves
THIN = 4         # thinning marks

_MASK64 = (1 << 64) - 1
_SUB_BITS = 28
_SUB_OFFSET = 1 << (_SUB_BITS - 1)
_SUB_MASK = (1 << _SUB_BITS) - 1


def stream_key(seed: int, tag: int, a: int = 0, b: int = 0) -> int:
    """Pack (seed, tag, a, b) into a 128-bit Philox key.

    ``a`` and ``b`` are signed sub-keys (slice index, replica index, ...)
    with |value| < 2**27.
    """
    if not 0 <= tag < 256:
        raise ValueError("tag must fit in 8 bits")
    ua = (a + _SUB_OFFSET) & _SUB_MASK
    ub = (b + _SUB_OFFSET) & _SUB_MASK
    return (seed & _MASK64) | (tag << 64) | (ua << 72) | (ub << 100)


def stream(seed: int, tag: int, a: int = 0, b: int = 0) -> np.random.Generator:
    """Independent generator for the given key tuple."""
    return np.random.Generator(np.random.Philox(key=stream_key(seed, tag, a, b)))


def replica_seed(base_seed: int, replica: int) -> int:
    """Seed for one replica of a Monte Carlo experiment.

    Kept trivially simple on purpose: replica streams are separated by the
    Philox key, not by seed arithmetic, so adjacent seeds are safe.
    """
    return (base_seed + replica) & _MASK64
