"""Named, splittable random streams derived from one master seed.

Every random draw in the library comes from a stream addressed by
(master seed, stream name, *indices). Streams with distinct addresses are
statistically independent, and the address fully determines the draws, so
results never depend on worker count, scheduling, or how many draws other
streams have consumed.
"""

from __future__ import annotations

import numpy as np

# Stream name -> fixed id. Part of the persisted-run contract; never reorder.
STREAMS = {
    "path": 0,
    "inner": 1,
    "basis": 2,
    "blocks": 3,
    "trace": 4,
    "eval-path": 5,
    "eval-inner": 6,
    "fixture": 7,
    "probe": 8,
}


def stream(master: int, name: str, *indices: int) -> np.random.Generator:
    """Generator for a named substream, split further by integer indices."""
    try:
        key = STREAMS[name]
    except KeyError:
        raise KeyError(f"unknown stream {name!r}; known: {sorted(STREAMS)}") from None
    if any(i < 0 for i in indices):
        raise ValueError("stream indices must be nonnegative")
    ss = np.random.SeedSequence(entropy=int(master) & (2**64 - 1), spawn_key=(key, *indices))
    return np.random.Generator(np.random.PCG64(ss))
