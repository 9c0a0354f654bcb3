"""Counter-based random streams derived from a single master seed.

Every random draw in the package comes from ``stream(master_seed, *key)``.
The key is a tuple of small non-negative integers (stream id, particle
count, replica index, ...).  Streams are built from a ``SeedSequence`` with
the key as ``spawn_key`` and fed to a Philox bit generator, so two keys
never share state and adding replicas never perturbs existing ones.
"""

from __future__ import annotations

import numpy as np

# stream identifiers
INITIAL_POSITIONS = 0
NOISE_MODES = 1
NOISE_INCREMENTS = 2
ZETA = 3
NOISE_CHECK = 4


def seed_sequence(master_seed: int, *key: int) -> np.random.SeedSequence:
    if master_seed is None:
        raise ValueError("a master seed is required")
    return np.random.SeedSequence(int(master_seed), spawn_key=tuple(int(k) for k in key))


def stream(master_seed: int, *key: int) -> np.random.Generator:
    """Independent generator for ``key`` under ``master_seed``."""
    return np.random.Generator(np.random.Philox(seed_sequence(master_seed, *key)))
