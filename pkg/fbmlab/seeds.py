"""Seed management.

Every random draw in the package comes from a Philox generator keyed by ``(seed, replication, component)``:
``SeedSequence(seed, spawn_key=(replication, component))``. A master seed expands into per-path (or per-chunk)
seeds through ``SeedSequence(master_seed).spawn(n)``, each child contributing one 64-bit word.
"""
from typing import List

import numpy as np

SEED_MASK = (1 << 64) - 1


def check_seed(seed: int) -> int:
    seed = int(seed)
    if not 0 <= seed <= SEED_MASK:
        raise ValueError(f"seed must be a 64-bit unsigned integer, got {seed}")
    return seed


def substream(seed: int, replication: int = 0, component: int = 0) -> np.random.Generator:
    sequence = np.random.SeedSequence(check_seed(seed), spawn_key=(int(replication), int(component)))
    return np.random.Generator(np.random.Philox(sequence))


def child_seeds(master_seed: int, count: int) -> List[int]:
    children = np.random.SeedSequence(check_seed(master_seed)).spawn(count)
    return [int(child.generate_state(1, dtype=np.uint64)[0]) for child in children]
