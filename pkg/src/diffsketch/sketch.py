"""Mergeable count sketches over dense vectors.

A sketch is a t x k table of float64 counters plus the master seed that fixes
its hash functions. Encoding adds sign(i) * g[i] into one counter per row;
querying reads the t signed counters back and takes their median (for even t,
the arithmetic mean of the two middle values). The sketch is linear in its
input, so sketches of equal shape and master seed can be merged by adding
counter tables and rescaled by a scalar, which is what the distributed
training drivers rely on.

The serialized wire form is little-endian: magic ``DSK1``, format version u16,
t u32, k u32, n u64, master_seed u64, then t*k IEEE-754 binary64 counters in
row-major order with no padding.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .hashing import MASK64, derive_row_seeds, hash_bins, hash_signs

# One-dimensional float64 arrays are the vector currency of the package.
DenseVector = np.ndarray

MAGIC = b"DSK1"
FORMAT_VERSION = 1
_HEADER = struct.Struct("<4sHIIQQ")
HEADER_SIZE = _HEADER.size

_MAX_COORD = 1 << 32


class MergeError(ValueError):
    """Raised when two sketches disagree on shape or seed."""


class SketchFormatError(ValueError):
    """Raised when a byte buffer is not a valid serialized sketch."""


class SketchMagicError(SketchFormatError):
    pass


class SketchVersionError(SketchFormatError):
    pass


class SketchLengthError(SketchFormatError):
    pass


@dataclass(frozen=True)
class SketchDims:
    """Sketch shape: t rows, k buckets per row, input dimension n."""

    t: int
    k: int
    n: int

    def __post_init__(self) -> None:
        for name in ("t", "k", "n"):
            v = getattr(self, name)
            if not isinstance(v, (int, np.integer)) or isinstance(v, bool):
                raise ValueError(f"{name} must be an integer, got {v!r}")
        if self.t < 1 or self.t >= 1 << 32:
            raise ValueError(f"t must be in [1, 2**32), got {self.t}")
        if self.k < 1 or self.k >= 1 << 32:
            raise ValueError(f"k must be in [1, 2**32), got {self.k}")
        # coordinates are hashed as 32-bit keys
        if self.n < 1 or self.n > _MAX_COORD:
            raise ValueError(f"n must be in [1, 2**32], got {self.n}")


def dims_for_error(mu: float, delta: float, n: int) -> SketchDims:
    """Smallest table for per-coordinate error mu * ||g||_2 at failure rate delta.

    t = ceil(ln(1/delta)) rounded up to the next odd integer so the median is
    a real entry, k = ceil(e / mu**2).
    """
    if not 0 < mu:
        raise ValueError(f"mu must be positive, got {mu}")
    if not 0 < delta < 1:
        raise ValueError(f"delta must be in (0, 1), got {delta}")
    t = math.ceil(math.log(1.0 / delta))
    t = max(t, 1)
    if t % 2 == 0:
        t += 1
    k = math.ceil(math.e / (mu * mu))
    return SketchDims(t=t, k=k, n=n)


def compression_ratio(dims: SketchDims) -> float:
    """Input length over counter count, n / (t * k)."""
    return dims.n / (dims.t * dims.k)


@lru_cache(maxsize=8)
def _hash_plan(t: int, k: int, n: int, master_seed: int):
    """Precomputed (t, n) bucket and sign tables for one shape and seed."""
    seeds = derive_row_seeds(master_seed, t)
    coords = np.arange(n, dtype=np.uint64)
    bins = np.stack([hash_bins(s.index_a, s.index_b, coords, k) for s in seeds])
    signs = np.stack([hash_signs(s.sign_a, s.sign_b, coords) for s in seeds])
    bins.flags.writeable = False
    signs.flags.writeable = False
    return bins, signs


def _check_vector(g, n: int) -> np.ndarray:
    g = np.asarray(g, dtype=np.float64)
    if g.ndim != 1 or g.shape[0] != n:
        raise ValueError(f"expected a vector of length {n}, got shape {g.shape}")
    if not np.all(np.isfinite(g)):
        raise ValueError("vector entries must be finite")
    return g


class CountSketch:
    """t x k signed-counter summary of a length-n vector."""

    __slots__ = ("dims", "master_seed", "table")

    def __init__(self, dims: SketchDims, master_seed: int, table: np.ndarray | None = None):
        if not 0 <= master_seed <= MASK64:
            raise ValueError("master_seed must be a 64-bit unsigned value")
        self.dims = dims
        self.master_seed = int(master_seed)
        if table is None:
            table = np.zeros((dims.t, dims.k), dtype=np.float64)
        else:
            table = np.asarray(table, dtype=np.float64)
            if table.shape != (dims.t, dims.k):
                raise ValueError(
                    f"table shape {table.shape} does not match dims ({dims.t}, {dims.k})"
                )
        self.table = table

    def _plan(self):
        return _hash_plan(self.dims.t, self.dims.k, self.dims.n, self.master_seed)

    def encode(self, g: DenseVector) -> None:
        """Add a length-n vector into the counters."""
        g = _check_vector(g, self.dims.n)
        bins, signs = self._plan()
        for r in range(self.dims.t):
            self.table[r] += np.bincount(bins[r], weights=signs[r] * g, minlength=self.dims.k)

    def row_estimates(self, i: int) -> np.ndarray:
        """The t signed counter reads for coordinate i, one per row."""
        if not 0 <= i < self.dims.n:
            raise IndexError(f"coordinate {i} out of range [0, {self.dims.n})")
        bins, signs = self._plan()
        rows = np.arange(self.dims.t)
        return signs[rows, i] * self.table[rows, bins[rows, i]]

    def query(self, i: int) -> float:
        """Median-of-rows estimate of coordinate i."""
        return float(np.median(self.row_estimates(i)))

    def query_all(self) -> DenseVector:
        """Estimates for all n coordinates at once."""
        bins, signs = self._plan()
        rows = np.arange(self.dims.t)[:, None]
        return np.median(signs * self.table[rows, bins], axis=0)

    def merge(self, other: "CountSketch") -> "CountSketch":
        """Add another sketch's counters into this one (in place)."""
        if not isinstance(other, CountSketch):
            raise TypeError(f"cannot merge CountSketch with {type(other).__name__}")
        for name in ("t", "k", "n"):
            a, b = getattr(self.dims, name), getattr(other.dims, name)
            if a != b:
                raise MergeError(f"sketches differ in {name}: {a} != {b}")
        if self.master_seed != other.master_seed:
            raise MergeError(
                f"sketches differ in master_seed: {self.master_seed} != {other.master_seed}"
            )
        self.table += other.table
        return self

    def scale(self, c: float) -> "CountSketch":
        """Multiply every counter by a finite scalar (in place)."""
        c = float(c)
        if not math.isfinite(c):
            raise ValueError(f"scale factor must be finite, got {c}")
        self.table *= c
        return self

    def copy(self) -> "CountSketch":
        return CountSketch(self.dims, self.master_seed, self.table.copy())


def new_sketch(dims: SketchDims, master_seed: int) -> CountSketch:
    """A zeroed sketch with the given shape and hash seed."""
    return CountSketch(dims, master_seed)


def serialize(sketch: CountSketch) -> bytes:
    """Wire form of a sketch; see the module docstring for the layout."""
    d = sketch.dims
    header = _HEADER.pack(MAGIC, FORMAT_VERSION, d.t, d.k, d.n, sketch.master_seed)
    return header + sketch.table.astype("<f8", copy=False).tobytes(order="C")


def serialized_size(dims: SketchDims) -> int:
    return HEADER_SIZE + 8 * dims.t * dims.k


def deserialize(buf: bytes) -> CountSketch:
    """Parse a serialized sketch, validating everything the format pins down.

    Corruption of any length-determining or identifying header field (magic,
    version, t, k) is detected; n and master_seed are trusted as written
    because the format carries no checksum.
    """
    buf = bytes(buf)
    if len(buf) < 4:
        raise SketchLengthError(f"buffer too short for magic: {len(buf)} bytes")
    if buf[:4] != MAGIC:
        raise SketchMagicError(f"bad magic {buf[:4]!r}, expected {MAGIC!r}")
    if len(buf) < HEADER_SIZE:
        raise SketchLengthError(f"truncated header: {len(buf)} of {HEADER_SIZE} bytes")
    _, version, t, k, n, master_seed = _HEADER.unpack_from(buf)
    if version != FORMAT_VERSION:
        raise SketchVersionError(f"unsupported format version {version}")
    try:
        dims = SketchDims(t=t, k=k, n=n)
    except ValueError as exc:
        raise SketchFormatError(f"invalid dims in header: {exc}") from exc
    expected = HEADER_SIZE + 8 * t * k
    if len(buf) < expected:
        raise SketchLengthError(f"truncated payload: {len(buf)} of {expected} bytes")
    if len(buf) > expected:
        raise SketchLengthError(f"trailing bytes: {len(buf)} > {expected}")
    table = np.frombuffer(buf, dtype="<f8", offset=HEADER_SIZE, count=t * k)
    table = table.astype(np.float64).reshape(t, k)
    if not np.all(np.isfinite(table)):
        raise SketchFormatError("non-finite counter in payload")
    return CountSketch(dims, master_seed, table)
