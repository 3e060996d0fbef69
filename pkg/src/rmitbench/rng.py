"""SplitMix64 streams shared by the scheduler, the bootstrap and the simulator.

SplitMix64 is counter based: output ``n`` (0-based) of a stream seeded with
``s`` is ``mix64(s + (n + 1) * GAMMA)``. Both the scalar and the numpy
implementations rely on that, so any draw can be addressed by its index and
replicates can be generated in bulk without walking the stream.
"""

from __future__ import annotations

import math

import numpy as np

MASK64 = (1 << 64) - 1
GAMMA = 0x9E3779B97F4A7C15
_M1 = 0xBF58476D1CE4E5B9
_M2 = 0x94D049BB133111EB
_TWO_POW_M53 = 2.0**-53

# Per-purpose stream tags, mixed into the master seed by derive_seed().
TAG_SCHEDULER = 0x01
TAG_BOOTSTRAP = 0x02
TAG_PLATFORM = 0x03
TAG_PLATFORM_TRADITIONAL = 0x04
TAG_INSTANCE_SPEED = 0x05
TAG_INSTANCE_NOISE = 0x06
TAG_BOOTSTRAP_V1 = 0x07
TAG_BOOTSTRAP_V2 = 0x08
TAG_PI = 0x09
TAG_GRID_CELL = 0x100


def mix64(z: int) -> int:
    z &= MASK64
    z = ((z ^ (z >> 30)) * _M1) & MASK64
    z = ((z ^ (z >> 27)) * _M2) & MASK64
    return z ^ (z >> 31)


def derive_seed(seed: int, tag: int) -> int:
    """Seed of the sub-stream ``tag`` of ``seed``: first SplitMix64 output of ``seed ^ tag``."""
    return mix64(((seed ^ tag) + GAMMA) & MASK64)


def to_unit(x: int) -> float:
    """Top 53 bits as a float in [0, 1)."""
    return (x >> 11) * _TWO_POW_M53


def to_index(x: int, n: int) -> int:
    """Map a raw draw to an integer in [0, n)."""
    k = int(to_unit(x) * n)
    return k if k < n else n - 1


class SplitMix64:
    """Sequential SplitMix64 generator with random access to its outputs."""

    def __init__(self, seed: int):
        self.seed = seed & MASK64
        self.position = 0

    def value_at(self, n: int) -> int:
        return mix64(self.seed + (n + 1) * GAMMA)

    def next(self) -> int:
        value = self.value_at(self.position)
        self.position += 1
        return value

    def uniform(self) -> float:
        return to_unit(self.next())

    def uniform_open(self) -> float:
        """Uniform in (0, 1], safe for log()."""
        return ((self.next() >> 11) + 1) * _TWO_POW_M53

    def normal(self) -> float:
        """Standard normal by Box-Muller (cosine branch only; two draws per variate)."""
        u1 = self.uniform_open()
        u2 = self.uniform()
        return math.sqrt(-2.0 * math.log(u1)) * math.cos(2.0 * math.pi * u2)

    def index(self, n: int) -> int:
        return to_index(self.next(), n)


# --- numpy counterparts -----------------------------------------------------

_GAMMA_U64 = np.uint64(GAMMA)
_M1_U64 = np.uint64(_M1)
_M2_U64 = np.uint64(_M2)


# uint64 arithmetic is meant to wrap.
@np.errstate(over="ignore")
def mix64_array(z: np.ndarray) -> np.ndarray:
    z = np.array(z, dtype=np.uint64, ndmin=1)
    z ^= z >> np.uint64(30)
    z *= _M1_U64
    z ^= z >> np.uint64(27)
    z *= _M2_U64
    z ^= z >> np.uint64(31)
    return z


@np.errstate(over="ignore")
def stream_values(seeds: np.ndarray, positions: np.ndarray) -> np.ndarray:
    """Outputs ``positions`` of the streams ``seeds``, broadcast together."""
    seeds = np.asarray(seeds, dtype=np.uint64)
    counters = (np.asarray(positions, dtype=np.uint64) + np.uint64(1)) * _GAMMA_U64
    return mix64_array(seeds + counters)


@np.errstate(over="ignore")
def derive_seeds(seed: int, tags: np.ndarray) -> np.ndarray:
    tags = np.asarray(tags, dtype=np.uint64)
    return mix64_array((np.uint64(seed & MASK64) ^ tags) + _GAMMA_U64)


def to_index_array(x: np.ndarray, n: np.ndarray) -> np.ndarray:
    """Vector form of to_index(); ``n`` may be 0 where the slot is unused (result 0)."""
    u = (x >> np.uint64(11)).astype(np.float64) * _TWO_POW_M53
    n = np.asarray(n, dtype=np.int64)
    k = (u * n).astype(np.int64)
    return np.minimum(k, np.maximum(n - 1, 0))
