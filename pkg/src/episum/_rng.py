"""Small deterministic PRNG usable inside numba kernels."""

import numba
import numpy as np


@numba.njit(cache=True)
def xorshift(state):
    """Advance a one-element uint64 state array; returns 32 random bits."""
    x = state[0]
    x ^= x >> np.uint64(12)
    x ^= x << np.uint64(25)
    x ^= x >> np.uint64(27)
    state[0] = x
    return (x * np.uint64(2685821657736338717)) >> np.uint64(32)


def make_state(*seed):
    rng = np.random.default_rng(list(seed))
    return np.array([rng.integers(1, 2**63, dtype=np.uint64)], dtype=np.uint64)
