"""Counter-based random streams.

Every stochastic routine takes an explicit seed and derives independent
Philox streams from it; nothing touches numpy's global RNG state.  The
same (seed, stream) pair always yields the same draws regardless of what
other streams were consumed, which is what makes whole runs replayable.
"""

from __future__ import annotations

import numpy as np


def make_rng(seed: int, stream: int = 0) -> np.random.Generator:
    """Independent generator for (seed, stream); both must be non-negative ints."""
    if not isinstance(seed, (int, np.integer)) or isinstance(seed, bool):
        raise ValueError(f"seed must be an int, got {type(seed).__name__}")
    if not isinstance(stream, (int, np.integer)) or isinstance(stream, bool):
        raise ValueError(f"stream must be an int, got {type(stream).__name__}")
    if not 0 <= seed < 2**64 or not 0 <= stream < 2**64:
        raise ValueError(f"seed and stream must be in [0, 2**64), got {seed}, {stream}")
    # Philox takes a 128-bit key: seed in the high word, stream in the low word.
    return np.random.Generator(np.random.Philox(key=(int(seed) << 64) | int(stream)))
