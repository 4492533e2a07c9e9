"""Seeded hash families for the sketch rows.

Every sketch row needs an index hash (coordinate -> bucket) and a sign hash
(coordinate -> +/-1), both pairwise independent over the random seed choice.
We use the multiply-add-shift family over the 64-bit ring:

    index:  h = (a * i + b) mod 2**64;  bucket = ((h >> 32) * k) >> 32
    sign:   h = (a * i + b) mod 2**64;  sign = +1 if the top bit is 0 else -1

The bucket reduction multiplies the high 32 hash bits by k and keeps the high
word, which maps [0, 2**32) onto [0, k) without modulo bias beyond the family's
own. Coordinates must fit in 32 bits; `a` is forced odd so it is never zero.

Row seeds are derived from a single 64-bit master seed with a splittable
counter scheme: word u of the stream is

    word(master, u) = mix64((master + (u + 1) * GAMMA) mod 2**64)

where GAMMA = 0x9E3779B97F4A7C15 and mix64 is the SplitMix64 finalizer. Row r
consumes words 4r..4r+3 as (index_a, index_b, sign_a, sign_b). Two sketches
agree on every hash function iff they share the master seed, which is what
makes merging well defined.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

MASK64 = (1 << 64) - 1
GAMMA = 0x9E3779B97F4A7C15

_U1 = np.uint64(1)
_U30 = np.uint64(30)
_U27 = np.uint64(27)
_U31 = np.uint64(31)
_U32 = np.uint64(32)
_U63 = np.uint64(63)
_MIX1 = np.uint64(0xBF58476D1CE4E5B9)
_MIX2 = np.uint64(0x94D049BB133111EB)
_GAMMA = np.uint64(GAMMA)


@dataclass(frozen=True)
class RowSeed:
    """Multiply-add-shift parameters for one sketch row."""

    index_a: int
    index_b: int
    sign_a: int
    sign_b: int

    def __post_init__(self) -> None:
        for name in ("index_a", "index_b", "sign_a", "sign_b"):
            v = getattr(self, name)
            if not 0 <= v <= MASK64:
                raise ValueError(f"{name} must be a 64-bit unsigned value, got {v}")
        # odd multipliers are nonzero and keep the map a bijection on the ring
        if self.index_a % 2 == 0:
            raise ValueError("index_a must be odd")
        if self.sign_a % 2 == 0:
            raise ValueError("sign_a must be odd")


def _mix64(z: np.ndarray) -> np.ndarray:
    z = (z ^ (z >> _U30)) * _MIX1
    z = (z ^ (z >> _U27)) * _MIX2
    return z ^ (z >> _U31)


def seed_words(master_seed: int | np.ndarray, count: int, offset: int = 0) -> np.ndarray:
    """Words [offset, offset+count) of the derived seed stream.

    Broadcasts over an array of master seeds: the result has shape
    ``master.shape + (count,)`` and dtype uint64.
    """
    if count < 0:
        raise ValueError("count must be >= 0")
    master = np.asarray(master_seed, dtype=np.uint64)
    u = np.arange(offset + 1, offset + count + 1, dtype=np.uint64)
    return _mix64(master[..., None] + u * _GAMMA)


def derive_row_seeds(master_seed: int, t: int) -> tuple[RowSeed, ...]:
    """Derive the t per-row hash seeds from one master seed."""
    if t < 1:
        raise ValueError(f"t must be >= 1, got {t}")
    if not 0 <= master_seed <= MASK64:
        raise ValueError("master_seed must be a 64-bit unsigned value")
    words = seed_words(master_seed, 4 * t)
    rows = []
    for r in range(t):
        ia, ib, sa, sb = (int(w) for w in words[4 * r : 4 * r + 4])
        rows.append(RowSeed(ia | 1, ib, sa | 1, sb))
    return tuple(rows)


def hash_bins(index_a, index_b, i, k: int) -> np.ndarray:
    """Vectorized bucket hash; broadcasts seeds against coordinates."""
    if not 1 <= k <= 1 << 32:
        raise ValueError(f"k must be in [1, 2**32], got {k}")
    a = np.asarray(index_a, dtype=np.uint64)
    b = np.asarray(index_b, dtype=np.uint64)
    x = np.asarray(i, dtype=np.uint64)
    h32 = (a * x + b) >> _U32
    return ((h32 * np.uint64(k)) >> _U32).astype(np.int64)


def hash_signs(sign_a, sign_b, i) -> np.ndarray:
    """Vectorized sign hash; returns float64 values in {+1.0, -1.0}."""
    a = np.asarray(sign_a, dtype=np.uint64)
    b = np.asarray(sign_b, dtype=np.uint64)
    x = np.asarray(i, dtype=np.uint64)
    top = ((a * x + b) >> _U63).astype(np.float64)
    return 1.0 - 2.0 * top


def index_hash(seed: RowSeed, i: int, k: int) -> int:
    """Bucket of coordinate i in a row with k buckets."""
    if not 0 <= i < 1 << 32:
        raise ValueError(f"coordinate must be in [0, 2**32), got {i}")
    return int(hash_bins(seed.index_a, seed.index_b, i, k))


def sign_hash(seed: RowSeed, i: int) -> int:
    """Sign (+1 or -1) of coordinate i."""
    if not 0 <= i < 1 << 32:
        raise ValueError(f"coordinate must be in [0, 2**32), got {i}")
    return int(hash_signs(seed.sign_a, seed.sign_b, i))
