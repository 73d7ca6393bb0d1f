"""Seeded counter-based random streams.

Every stream is a Philox generator keyed by a ``SeedSequence`` built from
the user seed plus an integer path.  Trajectory ``i`` of a simulation with
seed ``s`` always draws from ``substream(s, i)``, and replication ``r`` of
a study with base seed ``b`` uses seed ``study_seed(b, r)``, so results do
not depend on how work is scheduled across workers.
"""
import numpy as np


def substream(seed: int, *path: int) -> np.random.Generator:
    ss = np.random.SeedSequence(int(seed), spawn_key=tuple(int(p) for p in path))
    return np.random.Generator(np.random.Philox(ss))


def study_seed(base_seed: int, replication: int) -> int:
    """Derived 63-bit seed for one replication of a study."""
    ss = np.random.SeedSequence(int(base_seed), spawn_key=(int(replication),))
    return int(ss.generate_state(2, np.uint32).astype(np.uint64) @ np.array([1, 2**32], dtype=np.uint64)) >> 1
