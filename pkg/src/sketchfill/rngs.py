"""Deterministic RNG derivation.

Every random decision in the system derives a fresh generator from
(base seed, domain tag, indices...), so any step of a run can be reproduced
in isolation and training is resumable bit-exactly.
"""

from __future__ import annotations

import numpy as np

# domain tags; never reuse a number
NOISE = 1
MASK = 2
STROKES = 3
COLOR_DROP = 4
GP_BLEND = 5
EPOCH_PERM = 6
PARAM_INIT = 7
REAL_MASK = 8
EDIT_NOISE = 9
FORGE = 10


def rng_for(seed: int, *path: int) -> np.random.Generator:
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=tuple(int(p) for p in path))
    return np.random.Generator(np.random.PCG64(ss))


def subseed(seed: int, *path: int) -> int:
    """Derive a child integer seed, for APIs that take a plain seed."""
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=tuple(int(p) for p in path))
    a, b = ss.generate_state(2, np.uint64)
    return (int(a) << 64) | int(b)
