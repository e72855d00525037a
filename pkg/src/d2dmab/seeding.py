"""Seed tree and named random streams.

Every random quantity in a run is drawn from a stream keyed by an integer
seed plus a tuple of purpose/index keys, so results can be cited by one
master seed and replayed bit-exactly::

    master_seed
      -> topology seed t      derive_seed(master, TOPOLOGY_SEEDS, t)
           -> run seed r      derive_seed(topology_seed, RUN_SEEDS, r)

A topology seed drives geometry (TOPOLOGY), shadowing (SHADOWING) and the
arm-mean oracle (ORACLE). A run seed drives fast fading (FADING) and the
per-player policy streams (POLICY).
"""

import numpy as np

TOPOLOGY = 0
SHADOWING = 1
FADING = 2
POLICY = 3
ORACLE = 4

TOPOLOGY_SEEDS = 100
RUN_SEEDS = 101


def _entropy(seed):
    seed = int(seed)
    if seed < 0:
        raise ValueError(f"seeds must be non-negative, got {seed}")
    return seed


def stream(seed, *keys):
    """Return an independent generator for ``seed`` and purpose ``keys``."""
    ss = np.random.SeedSequence(_entropy(seed), spawn_key=tuple(int(k) for k in keys))
    return np.random.Generator(np.random.PCG64(ss))


def derive_seed(seed, *keys):
    """Derive a child 63-bit integer seed from ``seed`` and ``keys``."""
    ss = np.random.SeedSequence(_entropy(seed), spawn_key=tuple(int(k) for k in keys))
    return int(ss.generate_state(1, dtype=np.uint64)[0] >> np.uint64(1))


def topology_seeds(master_seed, count):
    return [derive_seed(master_seed, TOPOLOGY_SEEDS, t) for t in range(count)]


def run_seeds(topology_seed, count):
    return [derive_seed(topology_seed, RUN_SEEDS, r) for r in range(count)]
