"""Seeded synthetic datasets, a small CSV loader, and gradient diagnostics.

Synthetic generators stand in for benchmark datasets at desk scale: a linear
regression task with known ground-truth weights and a Gaussian
class-conditional classification task whose class means are fixed constants
(separation * e_c), so train and test sets drawn under different seeds share
one distribution. Partitions are IID by default; classification supports
label-skew (each worker restricted to a class subset) and Dirichlet label
mixing.
"""

from __future__ import annotations

import csv
import math
import os
from dataclasses import dataclass

import numpy as np

from .sketch import DenseVector


class CsvFormatError(ValueError):
    """CSV cell or structure problem; row/column are 1-based file positions."""

    def __init__(self, message: str, row: int | None = None, column: int | None = None):
        pos = ""
        if row is not None:
            pos = f" at row {row}" + (f", column {column}" if column is not None else "")
        super().__init__(message + pos)
        self.row = row
        self.column = column


@dataclass(frozen=True)
class Partition:
    """Per-worker (features, labels) arrays plus how they were generated."""

    parts: tuple[tuple[np.ndarray, np.ndarray], ...]
    kind: str
    seed: int

    def __post_init__(self) -> None:
        if not self.parts:
            raise ValueError("partition must have at least one worker")
        d = self.parts[0][0].shape[1]
        for X, y in self.parts:
            if X.ndim != 2 or X.shape[1] != d:
                raise ValueError("all workers must share the feature dimension")
            if y.shape != (X.shape[0],):
                raise ValueError("labels must be one per sample")
            if not np.all(np.isfinite(X)):
                raise ValueError("features must be finite")

    @property
    def workers(self) -> int:
        return len(self.parts)

    @property
    def feature_dim(self) -> int:
        return self.parts[0][0].shape[1]

    def pooled(self) -> tuple[np.ndarray, np.ndarray]:
        """All samples concatenated in worker order."""
        X = np.concatenate([p[0] for p in self.parts])
        y = np.concatenate([p[1] for p in self.parts])
        return X, y


def _rng(seed: int, *key: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=key))


def synth_regression(
    workers: int,
    samples_per_worker: int,
    feature_dim: int,
    noise_sd: float,
    seed: int,
) -> tuple[Partition, DenseVector]:
    """IID linear-regression partition; returns (partition, true weights)."""
    if workers < 1 or samples_per_worker < 1 or feature_dim < 1:
        raise ValueError("workers, samples_per_worker and feature_dim must be >= 1")
    if noise_sd < 0:
        raise ValueError(f"noise_sd must be >= 0, got {noise_sd}")
    w_star = _rng(seed, 0).normal(size=feature_dim)
    parts = []
    for w in range(workers):
        rng = _rng(seed, 1, w)
        X = rng.normal(size=(samples_per_worker, feature_dim))
        y = X @ w_star + noise_sd * rng.normal(size=samples_per_worker)
        parts.append((X, y))
    return Partition(parts=tuple(parts), kind="iid", seed=seed), w_star


DEFAULT_SEPARATION = 4.0


def class_means(feature_dim: int, classes: int, separation: float = DEFAULT_SEPARATION) -> np.ndarray:
    """Fixed class means: separation * e_c. Seed-independent by design."""
    if classes < 2:
        raise ValueError(f"classes must be >= 2, got {classes}")
    if feature_dim < classes:
        raise ValueError(
            f"feature_dim must be >= classes for separated means, got {feature_dim} < {classes}"
        )
    means = np.zeros((classes, feature_dim))
    means[np.arange(classes), np.arange(classes)] = separation
    return means


def synth_classification(
    workers: int,
    samples_per_worker: int,
    feature_dim: int,
    classes: int,
    skew: int | float | None,
    seed: int,
    separation: float = DEFAULT_SEPARATION,
) -> Partition:
    """Gaussian class-conditional features around fixed separated means.

    skew=None (or skew equal to the class count) gives an IID partition. An
    integer skew restricts worker w to `skew` classes assigned round-robin;
    a float skew is a Dirichlet concentration: each worker's label mix is
    drawn from Dir(skew * 1), sharper for smaller skew.
    """
    if workers < 1 or samples_per_worker < 1:
        raise ValueError("workers and samples_per_worker must be >= 1")
    means = class_means(feature_dim, classes, separation)
    if skew is None or (isinstance(skew, (int, np.integer)) and skew == classes):
        kind = "iid"
    elif isinstance(skew, (int, np.integer)):
        if not 1 <= skew <= classes:
            raise ValueError(f"classes per worker must be in [1, {classes}], got {skew}")
        kind = "label-skew"
    else:
        if not skew > 0:
            raise ValueError(f"dirichlet concentration must be > 0, got {skew}")
        kind = "dirichlet"
    parts = []
    for w in range(workers):
        rng = _rng(seed, 2, w)
        if kind == "iid":
            labels = rng.integers(0, classes, size=samples_per_worker)
        elif kind == "label-skew":
            allowed = [(w * int(skew) + j) % classes for j in range(int(skew))]
            labels = rng.choice(allowed, size=samples_per_worker)
        else:
            mix = rng.dirichlet(np.full(classes, float(skew)))
            labels = rng.choice(classes, size=samples_per_worker, p=mix)
        X = means[labels] + rng.normal(size=(samples_per_worker, feature_dim))
        parts.append((X, labels.astype(np.int64)))
    return Partition(parts=tuple(parts), kind=kind, seed=seed)


def load_csv(path: str | os.PathLike, label_column: int | str | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Numeric CSV with a header row -> (features, labels) in file row order.

    label_column selects the label field by 0-based index or header name;
    None means the last column. Error positions are 1-based file coordinates
    counting the header as row 1.
    """
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise CsvFormatError("empty file", row=1)
    header = rows[0]
    width = len(header)
    if width < 2:
        raise CsvFormatError(f"need at least 2 columns, found {width}", row=1)
    if len(rows) < 2:
        raise CsvFormatError("no data rows after the header", row=1)

    if label_column is None:
        label_idx = width - 1
    elif isinstance(label_column, str):
        stripped = [h.strip() for h in header]
        if label_column not in stripped:
            raise CsvFormatError(f"label column {label_column!r} not in header", row=1)
        label_idx = stripped.index(label_column)
    else:
        label_idx = int(label_column)
        if not 0 <= label_idx < width:
            raise CsvFormatError(
                f"label column index {label_idx} out of range [0, {width})", row=1
            )

    features, labels = [], []
    for r, row in enumerate(rows[1:], start=2):
        if len(row) != width:
            raise CsvFormatError(
                f"expected {width} fields, found {len(row)}", row=r, column=len(row) + 1
            )
        values = []
        for c, cell in enumerate(row, start=1):
            try:
                v = float(cell)
            except ValueError:
                raise CsvFormatError(f"non-numeric cell {cell!r}", row=r, column=c) from None
            if not math.isfinite(v):
                raise CsvFormatError(f"non-finite cell {cell!r}", row=r, column=c)
            values.append(v)
        labels.append(values[label_idx])
        features.append([v for c, v in enumerate(values) if c != label_idx])
    return np.asarray(features, dtype=np.float64), np.asarray(labels, dtype=np.float64)


def save_csv(path: str | os.PathLike, X: np.ndarray, y: np.ndarray, label_name: str = "label") -> None:
    """Write features plus a trailing label column; floats as round-trip decimals."""
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if X.ndim != 2 or y.shape != (X.shape[0],):
        raise ValueError("X must be 2-D with one label per row")
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow([f"x{j}" for j in range(X.shape[1])] + [label_name])
        for row, label in zip(X, y):
            writer.writerow([repr(float(v)) for v in row] + [repr(float(label))])


def partition_rows(X: np.ndarray, y: np.ndarray, workers: int, seed: int = 0) -> Partition:
    """Split loaded rows into contiguous per-worker blocks, preserving order."""
    if workers < 1:
        raise ValueError("workers must be >= 1")
    n = X.shape[0]
    if n < workers:
        raise ValueError(f"cannot split {n} rows across {workers} workers")
    bounds = [round(w * n / workers) for w in range(workers + 1)]
    parts = tuple(
        (X[bounds[w] : bounds[w + 1]], y[bounds[w] : bounds[w + 1]]) for w in range(workers)
    )
    return Partition(parts=parts, kind="iid", seed=seed)


@dataclass(frozen=True)
class HistogramReport:
    """Equal-width histogram of a vector plus its first moments."""

    counts: np.ndarray
    edges: np.ndarray
    mean: float
    variance: float
    excess_kurtosis: float


def gradient_histogram(g: DenseVector, bins: int = 50) -> HistogramReport:
    """Histogram over [min, max] with mean, variance, and excess kurtosis."""
    g = np.asarray(g, dtype=np.float64)
    if g.ndim != 1 or g.size == 0:
        raise ValueError(f"expected a nonempty vector, got shape {g.shape}")
    if bins < 1:
        raise ValueError(f"bins must be >= 1, got {bins}")
    counts, edges = np.histogram(g, bins=bins)
    mean = float(np.mean(g))
    var = float(np.var(g))
    if var > 0:
        kurt = float(np.mean((g - mean) ** 4) / var**2 - 3.0)
    else:
        kurt = 0.0
    return HistogramReport(
        counts=counts, edges=edges, mean=mean, variance=var, excess_kurtosis=kurt
    )
