"""Counter-based random numbers keyed by (seed, time, site).

Every matrix column A_{t, ., y} draws its randomness from a hash of
(trajectory seed, t, y), so a trajectory's law does not depend on the order
in which columns are visited, nor on how replicates are scheduled across
threads.  The mixing function is the SplitMix64 finalizer.

Replicate seeds are derived from a master seed with ``numpy.random.SeedSequence``.
"""

from __future__ import annotations

import numba as nb
import numpy as np

GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_S30 = np.uint64(30)
_S27 = np.uint64(27)
_S31 = np.uint64(31)
_S11 = np.uint64(11)
_INV53 = 1.0 / 9007199254740992.0  # 2^-53


@nb.njit(inline="always")
def mix64(z):
    z = np.uint64(z)  # signed inputs would shift arithmetically
    z = (z ^ (z >> _S30)) * _M1
    z = (z ^ (z >> _S27)) * _M2
    return z ^ (z >> _S31)


@nb.njit(inline="always")
def time_key(seed, t):
    return mix64(seed ^ mix64(np.uint64(t) + GOLDEN))


@nb.njit(inline="always")
def pack_bits(d):
    """Bits per coordinate in a packed site index."""
    return min(32, 63 // d)


@nb.njit(inline="always")
def pack_site(coords):
    """Pack a site into one int64, coordinate 0 most significant.

    Packing is layout independent, so sites can be hashed from the packed
    value, and neighbours differ from it by fixed constants.
    """
    d = coords.shape[0]
    bits = pack_bits(d)
    bias = np.int64(1) << (bits - 1)
    g = np.int64(0)
    for j in range(d):
        g = (g << bits) | (coords[j] + bias)
    return g


@nb.njit(inline="always")
def site_key_packed(tkey, g):
    return mix64((np.uint64(g) * _M1) ^ tkey)


@nb.njit(inline="always")
def site_key(tkey, coords):
    return site_key_packed(tkey, pack_site(coords))


@nb.njit(inline="always")
def uniform(key, k):
    """k-th uniform in [0, 1) attached to ``key``."""
    key = np.uint64(key)
    return np.float64(mix64(key + GOLDEN * np.uint64(k + 1)) >> _S11) * _INV53


def replicate_seed(master_seed: int, replicate: int) -> int:
    """Independent 64-bit seed for replicate ``replicate`` of ``master_seed``."""
    ss = np.random.SeedSequence(int(master_seed) & (2**64 - 1), spawn_key=(int(replicate),))
    return int(ss.generate_state(1, np.uint64)[0])


def trajectory_key(seed: int) -> np.uint64:
    """Scramble a user seed into the kernel key."""
    ss = np.random.SeedSequence(int(seed) & (2**64 - 1))
    return np.uint64(ss.generate_state(1, np.uint64)[0])


def seed_from(rng) -> int:
    """Accept an int seed or a numpy Generator and return a 64-bit seed."""
    if isinstance(rng, np.random.Generator):
        return int(rng.integers(0, 2**63 - 1, dtype=np.int64))
    return int(rng)
