"""Named random substreams.

A stream is identified by a master seed plus a path of non-negative
integers, e.g. ``(seed, trial, 1)``. Streams with different paths are
statistically independent, so work can be scheduled in any order.
"""

import numpy as np


def substream(seed, *path):
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=tuple(int(p) for p in path))
    return np.random.Generator(np.random.PCG64(ss))
