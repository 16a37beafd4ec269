"""Named RNG substreams derived from one master seed.

Every consumer of randomness gets its own counter-derived stream
``SeedSequence((master, tag, *key))``.  Streams are independent of replay
order and of each other, which is what makes two properties hold:

* the same config replays bit for bit, and
* disabling one consumer (e.g. the channel) does not shift the draws seen
  by any other consumer (compute schedules, gradient noise, ...).
"""

from __future__ import annotations

import numpy as np

# Substream tags.  Frozen: changing these renumbers every stream.
COMPUTE_SCHEDULE = 0
TRANSMIT_SCHEDULE = 1
GRADIENT_NOISE = 2
FADING = 3
PLACEMENT = 4
DATA = 5
CONSTANTS = 6
FUZZ = 7
RUN = 8


def substream(master_seed: int, tag: int, *key: int) -> np.random.Generator:
    """Return the generator for stream ``(master_seed, tag, *key)``."""
    return np.random.default_rng(np.random.SeedSequence((master_seed, tag) + tuple(key)))


def derive_seed(master_seed: int, tag: int, *key: int) -> int:
    """Collapse a substream identity into a single 64-bit integer seed.

    Used by the sweep harness so each run's config carries a plain
    integer seed while remaining a pure function of (master, point, rep).
    """
    ss = np.random.SeedSequence((master_seed, tag) + tuple(key))
    return int(ss.generate_state(2, dtype=np.uint64)[0])


def float_key(value: float) -> int:
    """Stable integer key for a float sweep value (its bit pattern)."""
    return int(np.float64(value).view(np.uint64))
