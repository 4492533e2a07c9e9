"""Mergeable count sketches with a differential-privacy accountant, plus a
deterministic simulator of sketch-compressed distributed SGD and federated
averaging."""

from .hashing import RowSeed, derive_row_seeds, hash_bins, hash_signs, index_hash, seed_words, sign_hash
from .privacy import (
    GradientStats,
    PrivacyReport,
    RatioCheckReport,
    accountant_applies,
    empirical_ratio_check,
    estimate_stats,
    laplace_sample,
    pad_with_noise,
    sketch_epsilon,
    validate_and_noise,
)
from .sketch import (
    CountSketch,
    MergeError,
    SketchDims,
    SketchFormatError,
    compression_ratio,
    deserialize,
    dims_for_error,
    new_sketch,
    serialize,
    serialized_size,
)

__all__ = [
    "CountSketch",
    "GradientStats",
    "MergeError",
    "PrivacyReport",
    "RatioCheckReport",
    "RowSeed",
    "SketchDims",
    "SketchFormatError",
    "accountant_applies",
    "compression_ratio",
    "derive_row_seeds",
    "deserialize",
    "dims_for_error",
    "empirical_ratio_check",
    "estimate_stats",
    "hash_bins",
    "hash_signs",
    "index_hash",
    "laplace_sample",
    "new_sketch",
    "pad_with_noise",
    "serialize",
    "serialized_size",
    "seed_words",
    "sign_hash",
    "sketch_epsilon",
    "validate_and_noise",
]

__version__ = "0.1.0"
