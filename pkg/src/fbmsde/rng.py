"""Named, splittable random streams.

All stochastic routines in the package draw from counter-based Philox
generators keyed by a user seed plus a tuple of small integers naming the
stream (purpose tag, chunk index, coordinate, ...).  Streams with distinct
names are statistically independent, and the draw for a given name depends
only on the seed, never on evaluation order or thread count.
"""

from __future__ import annotations

import numpy as np

# Purpose tags for spawn keys.  Keep these stable: changing them changes
# every sampled path for a given seed.
TAG_PATH = 1        # fBm path sampling
TAG_REFINE = 2      # dyadic midpoint refinement
TAG_SIMPLEX = 3     # Monte-Carlo simplex quadrature
TAG_MEASURE = 4     # sampler-type measures
TAG_SDE = 5         # SDE solver replicates (driver endpoints, flows)
TAG_SUBSEED = 6     # derived integer seeds for nested runs
TAG_SIGCHECK = 7    # random piecewise-linear paths for signature checks


def stream(seed: int, *name: int) -> np.random.Generator:
    """Return the generator for the stream ``name`` under ``seed``."""
    if not isinstance(seed, (int, np.integer)):
        raise TypeError(f"seed must be an integer, got {type(seed).__name__}")
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=tuple(int(k) for k in name))
    return np.random.Generator(np.random.Philox(ss))


def subseed(seed: int, *name: int) -> int:
    """Derive an integer seed for an independent nested run.

    Used when one routine launches another seeded routine several times
    (for instance one Monte-Carlo run per horizon): each call site gets its
    own deterministic seed without coordinating counters.
    """
    if not isinstance(seed, (int, np.integer)):
        raise TypeError(f"seed must be an integer, got {type(seed).__name__}")
    ss = np.random.SeedSequence(
        entropy=int(seed), spawn_key=(TAG_SUBSEED, *(int(k) for k in name))
    )
    return int(ss.generate_state(1, np.uint64)[0])
