"""Keyed counter-based randomness.

Every random quantity in the package is a pure function of a 64-bit key and
an integer counter.  Keys are derived by chaining a splitmix64 finalizer over
a domain tag and a fixed-order sequence of 64-bit words (coordinates are
reinterpreted as two's-complement ``uint64``), so the environment at a site and
the uniform driving step ``n`` of a walk never depend on evaluation order.
"""

from __future__ import annotations

import math

import numpy as np
from numba import njit

U64 = np.uint64

_GOLDEN = U64(0x9E3779B97F4A7C15)
_M1 = U64(0xBF58476D1CE4E5B9)
_M2 = U64(0x94D049BB133111EB)
_S30 = U64(30)
_S27 = U64(27)
_S31 = U64(31)
_S11 = U64(11)
_INV53 = 1.0 / 9007199254740992.0

# Domain tags keep the environment and walk streams disjoint.
DOMAIN_SITE = 0x51_7E_00_01
DOMAIN_STEP = 0x57_E9_00_02
DOMAIN_ENV_OF_WALK = 0xE7_00_00_03
DOMAIN_WALK_SEED = 0x3A_1C_00_04


def as_u64(seed: int) -> np.uint64:
    """Reduce any Python int to an unsigned 64-bit value."""
    return U64(int(seed) % (1 << 64))


@njit(cache=True, nogil=True)
def mix64(z):
    z = (z ^ (z >> _S30)) * _M1
    z = (z ^ (z >> _S27)) * _M2
    return z ^ (z >> _S31)


@njit(cache=True, nogil=True)
def derive_key(seed, domain, words):
    h = mix64(seed ^ mix64(U64(domain) + _GOLDEN))
    h = mix64(h ^ U64(words.shape[0]))
    for i in range(words.shape[0]):
        h = mix64(h ^ (U64(words[i]) + _GOLDEN))
    return h


@njit(cache=True, nogil=True)
def uniform(key, counter):
    """Uniform double in [0, 1) at position ``counter`` of stream ``key``."""
    z = mix64(key + (U64(counter) + U64(1)) * _GOLDEN)
    return float(z >> _S11) * _INV53


@njit(cache=True, nogil=True)
def gamma_variate(shape, key, counter):
    """Marsaglia-Tsang gamma draw; returns (value, next counter)."""
    boost = 1.0
    a = shape
    if a < 1.0:
        u = uniform(key, counter)
        counter += 1
        boost = (1.0 - u) ** (1.0 / a)
        a += 1.0
    dd = a - 1.0 / 3.0
    c = 1.0 / math.sqrt(9.0 * dd)
    while True:
        u1 = 1.0 - uniform(key, counter)
        u2 = uniform(key, counter + 1)
        counter += 2
        z = math.sqrt(-2.0 * math.log(u1)) * math.cos(2.0 * math.pi * u2)
        v = 1.0 + c * z
        if v <= 0.0:
            continue
        v = v * v * v
        u = 1.0 - uniform(key, counter)
        counter += 1
        if u < 1.0 - 0.0331 * z**4:
            break
        if math.log(u) < 0.5 * z * z + dd * (1.0 - v + math.log(v)):
            break
    return dd * v * boost, counter


def key_for(seed: int, domain: int, words=()) -> np.uint64:
    return U64(derive_key(as_u64(seed), domain, np.asarray(words, dtype=np.int64).reshape(-1)))


def walk_seed(master_seed: int, walk_index: int) -> int:
    """Seed of walk ``walk_index`` in an annealed batch."""
    return int(key_for(master_seed, DOMAIN_WALK_SEED, (walk_index,)))


def env_seed(master_seed: int, walk_index: int) -> int:
    """Seed of the fresh environment paired with walk ``walk_index``."""
    return int(key_for(master_seed, DOMAIN_ENV_OF_WALK, (walk_index,)))
