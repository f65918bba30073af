"""Counter-based, splittable random streams.

Every source of randomness in the package derives from a single master seed
through named substreams, so that scaling the particle count or adding
replicas never reuses or reorders noise.  A substream is identified by a
namespace constant plus integer indices (typically replica and particle).
"""

from __future__ import annotations

import numpy as np

# Namespace constants.  Keep these stable: they are part of the
# reproducibility contract (same seed + config => same output).
NOISE = 0      # Brownian increments, keyed (NOISE, replica, particle)
INIT = 1       # initial-condition sampling, keyed (INIT, replica)
DICT = 2       # function dictionaries for measure distances
SAMPLER = 3    # generic validation / diagnostic sampling
OPT = 4        # optimizer restart points
BRIDGE = 5     # Brownian-bridge refinement, keyed (BRIDGE, replica, particle, level)


def substream(master_seed: int, *key: int) -> np.random.Generator:
    """Return the generator for the substream named by ``key``.

    Deterministic in (master_seed, key) and independent across distinct keys.
    """
    if any(k < 0 for k in key):
        raise ValueError("substream keys must be nonnegative integers")
    seq = np.random.SeedSequence(int(master_seed), spawn_key=tuple(int(k) for k in key))
    return np.random.Generator(np.random.Philox(seq))
