"""Convex models and the two sketch-compressed training protocols.

One distributed-SGD round: every worker computes a mini-batch gradient,
estimates its statistics, pads it with Gaussian noise entries, encodes the
padded vector into a sketch seeded by the shared per-round master seed, and
validates it against the epsilon target (adding Laplace noise if the sketch
alone falls short). The server merges the m sketches and rescales by 1/m;
every worker queries the merged sketch, truncates the padding, optionally
zeroes the worst-estimated coordinates against its own local gradient, and
takes a step. One federated-averaging round samples K devices by weight
without replacement, runs E local epochs on each, and applies the averaged
sketched weight deltas to the global model; error correction is not applied
there because local gradients are stale.

Randomness is drawn from streams keyed by (purpose, worker, round), so worker
execution order, including thread-parallel execution, cannot change any
result.
"""

from __future__ import annotations

import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .data import Partition
from .privacy import (
    GradientStats,
    PrivacyReport,
    estimate_stats,
    pad_with_noise,
    validate_and_noise,
)
from .sketch import CountSketch, DenseVector, SketchDims, new_sketch, serialized_size

SGD_MODE = "distributed-sgd"
FEDAVG_MODE = "fedavg"

LEAST_SQUARES = "least-squares"
LOGISTIC = "multiclass-logistic"

# rng stream domains; streams are keyed (domain, worker, round[, epoch])
_DOM_ROUND_SEED = 1
_DOM_BATCH = 2
_DOM_PAD = 3
_DOM_NOISE = 4
_DOM_SAMPLE = 5


def _stream(master_seed: int, *key: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(master_seed, spawn_key=key))


@dataclass(frozen=True)
class Model:
    """A flat weight vector; layout is fixed by the loss kind."""

    weights: DenseVector

    def __post_init__(self) -> None:
        w = np.asarray(self.weights, dtype=np.float64)
        if w.ndim != 1:
            raise ValueError(f"weights must be a vector, got shape {w.shape}")
        if not np.all(np.isfinite(w)):
            raise ValueError("weights must be finite")
        object.__setattr__(self, "weights", w)


@dataclass(frozen=True)
class LossSpec:
    """Convex objective: plain least squares or multiclass logistic + L2."""

    kind: str
    l2: float = 0.0

    def __post_init__(self) -> None:
        if self.kind not in (LEAST_SQUARES, LOGISTIC):
            raise ValueError(f"unknown loss kind {self.kind!r}")
        if self.l2 < 0:
            raise ValueError(f"l2 must be >= 0, got {self.l2}")


def model_dim(loss: LossSpec, feature_dim: int, classes: int | None = None) -> int:
    """Weight-vector length: feature_dim, or feature_dim*classes + classes."""
    if loss.kind == LEAST_SQUARES:
        return feature_dim
    if classes is None or classes < 2:
        raise ValueError("logistic models need classes >= 2")
    return feature_dim * classes + classes


def _unpack_logistic(w: np.ndarray, d: int) -> tuple[np.ndarray, np.ndarray]:
    if w.size % (d + 1) != 0 or w.size // (d + 1) < 2:
        raise ValueError(
            f"weight length {w.size} does not match feature_dim {d} for a logistic model"
        )
    classes = w.size // (d + 1)
    return w[: d * classes].reshape(d, classes), w[d * classes :]


def _softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def loss_value(model: Model, loss: LossSpec, X: np.ndarray, y: np.ndarray) -> float:
    """Batch-average loss plus the L2 term."""
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] == 0:
        raise ValueError(f"expected a nonempty sample matrix, got shape {X.shape}")
    w = model.weights
    if loss.kind == LEAST_SQUARES:
        if w.size != X.shape[1]:
            raise ValueError(f"weight length {w.size} != feature_dim {X.shape[1]}")
        r = X @ w - np.asarray(y, dtype=np.float64)
        value = 0.5 * float(np.mean(r * r))
    else:
        W, b = _unpack_logistic(w, X.shape[1])
        p = _softmax(X @ W + b)
        labels = np.asarray(y, dtype=np.int64)
        value = -float(np.mean(np.log(p[np.arange(len(labels)), labels] + 1e-300)))
    return value + 0.5 * loss.l2 * float(w @ w)


def gradient(model: Model, loss: LossSpec, batch: tuple[np.ndarray, np.ndarray]) -> DenseVector:
    """Exact gradient of the batch-average loss plus the L2 term."""
    X, y = batch
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] == 0:
        raise ValueError(f"expected a nonempty sample matrix, got shape {X.shape}")
    w = model.weights
    if loss.kind == LEAST_SQUARES:
        if w.size != X.shape[1]:
            raise ValueError(f"weight length {w.size} != feature_dim {X.shape[1]}")
        g = X.T @ (X @ w - np.asarray(y, dtype=np.float64)) / X.shape[0]
    else:
        W, b = _unpack_logistic(w, X.shape[1])
        labels = np.asarray(y, dtype=np.int64)
        if labels.min() < 0 or labels.max() >= W.shape[1]:
            raise ValueError("labels out of range for the model's class count")
        p = _softmax(X @ W + b)
        p[np.arange(len(labels)), labels] -= 1.0
        p /= X.shape[0]
        g = np.concatenate([(X.T @ p).ravel(), p.sum(axis=0)])
    return g + loss.l2 * w


def predict_labels(model: Model, X: np.ndarray) -> np.ndarray:
    """Argmax class predictions of a logistic model."""
    W, b = _unpack_logistic(model.weights, np.asarray(X).shape[1])
    return np.argmax(np.asarray(X, dtype=np.float64) @ W + b, axis=1)


def accuracy(model: Model, X: np.ndarray, y: np.ndarray) -> float:
    return float(np.mean(predict_labels(model, X) == np.asarray(y, dtype=np.int64)))


def error_correct(queried: DenseVector, local_grad: DenseVector, fraction: float) -> DenseVector:
    """Zero the floor(fraction*n) queried coordinates farthest from the local gradient.

    Ties in the gap |queried - local| are broken toward the lower index.
    """
    q = np.asarray(queried, dtype=np.float64)
    g = np.asarray(local_grad, dtype=np.float64)
    if q.shape != g.shape or q.ndim != 1:
        raise ValueError(f"length mismatch: {q.shape} vs {g.shape}")
    if not 0.0 <= fraction <= 1.0:
        raise ValueError(f"fraction must be in [0, 1], got {fraction}")
    count = math.floor(fraction * q.size)
    if count == 0:
        return q.copy()
    order = np.argsort(-np.abs(q - g), kind="stable")
    out = q.copy()
    out[order[:count]] = 0.0
    return out


def step_size(i: int, c: float) -> float:
    """Decaying step c / sqrt(i) for round index i >= 1."""
    if i < 1:
        raise ValueError(f"round index must be >= 1, got {i}")
    if not c > 0:
        raise ValueError(f"c must be > 0, got {c}")
    return c / math.sqrt(i)


@dataclass(frozen=True)
class TrainConfig:
    """Everything the round functions need beyond the dataset itself.

    batch_size=None means full local batches. t/k default by mode when left
    None; exactly one of k and compression may be set. An unset
    error_correction_fraction resolves to 0.5 in distributed SGD and 0.0 in
    federated averaging.
    """

    workers: int
    rounds: int
    batch_size: int | None = 10
    lr: float = 0.01
    lr_schedule: str = "const"
    step_c: float = 0.1
    eps_target: float = math.inf
    t: int | None = None
    k: int | None = None
    compression: float | None = None
    m_pad: int = 0
    error_correction_fraction: float | None = None
    devices_per_round: int | None = None
    local_epochs: int = 1
    sample_weights: tuple[float, ...] | None = None
    percentile: float = 0.9
    master_seed: int = 0

    def __post_init__(self) -> None:
        if self.workers < 1:
            raise ValueError(f"workers must be >= 1, got {self.workers}")
        if self.rounds < 1:
            raise ValueError(f"rounds must be >= 1, got {self.rounds}")
        if self.batch_size is not None and self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1 or None, got {self.batch_size}")
        if self.lr_schedule not in ("const", "inv-sqrt"):
            raise ValueError(f"lr_schedule must be const or inv-sqrt, got {self.lr_schedule!r}")
        if not self.lr > 0 or not self.step_c > 0:
            raise ValueError("lr and step_c must be > 0")
        if not self.eps_target > 0:
            raise ValueError(f"eps_target must be > 0, got {self.eps_target}")
        if self.t is not None and self.t < 1:
            raise ValueError(f"t must be >= 1, got {self.t}")
        if self.k is not None and self.compression is not None:
            raise ValueError("set k or compression, not both")
        if self.k is not None and self.k < 1:
            raise ValueError(f"k must be >= 1, got {self.k}")
        if self.compression is not None and not self.compression > 0:
            raise ValueError(f"compression must be > 0, got {self.compression}")
        if self.m_pad < 0:
            raise ValueError(f"m_pad must be >= 0, got {self.m_pad}")
        f = self.error_correction_fraction
        if f is not None and not 0.0 <= f <= 1.0:
            raise ValueError(f"error_correction_fraction must be in [0, 1], got {f}")
        k_dev = self.devices_per_round
        if k_dev is not None and not 1 <= k_dev <= self.workers:
            raise ValueError(
                f"devices_per_round must be in [1, {self.workers}], got {k_dev}"
            )
        if self.local_epochs < 1:
            raise ValueError(f"local_epochs must be >= 1, got {self.local_epochs}")
        if self.sample_weights is not None:
            p = np.asarray(self.sample_weights, dtype=np.float64)
            if p.shape != (self.workers,) or np.any(p < 0) or not math.isclose(
                float(p.sum()), 1.0, rel_tol=1e-9
            ):
                raise ValueError("sample_weights must be a length-m nonnegative simplex vector")
        if not 0 < self.percentile <= 1:
            raise ValueError(f"percentile must be in (0, 1], got {self.percentile}")


def default_t(mode: str) -> int:
    if mode == SGD_MODE:
        return 7
    if mode == FEDAVG_MODE:
        return 10
    raise ValueError(f"unknown mode {mode!r}")


def resolve_dims(cfg: TrainConfig, dim: int, mode: str) -> SketchDims:
    """Sketch shape for a model of `dim` parameters under this config.

    With a compression ratio, k = round(n_padded / (t * ratio)), clamped to 1.
    """
    n_padded = dim + cfg.m_pad
    t = cfg.t if cfg.t is not None else default_t(mode)
    if cfg.k is not None:
        k = cfg.k
    elif cfg.compression is not None:
        k = max(1, round(n_padded / (t * cfg.compression)))
    else:
        raise ValueError("config must set k or compression")
    return SketchDims(t=t, k=k, n=n_padded)


def effective_fraction(cfg: TrainConfig, mode: str) -> float:
    f = cfg.error_correction_fraction
    if f is None:
        return 0.5 if mode == SGD_MODE else 0.0
    return f


@dataclass(frozen=True)
class SgdState:
    """Per-worker weight vectors after `round_index` completed rounds."""

    round_index: int
    weights: np.ndarray  # (workers, dim)


@dataclass(frozen=True)
class FedAvgState:
    """Global weight vector after `round_index` completed rounds."""

    round_index: int
    weights: np.ndarray  # (dim,)


@dataclass(frozen=True)
class RoundResult:
    """Raw facts of one round, for the driver to turn into metrics."""

    round_index: int
    step: float
    dims: SketchDims
    round_seed: int
    privacy: tuple[PrivacyReport, ...]
    participants: tuple[int, ...]
    bytes_per_worker: int
    grad_sq_norm_max: float
    weight_spread: float
    merged: CountSketch


def init_sgd_state(workers: int, dim: int) -> SgdState:
    return SgdState(round_index=0, weights=np.zeros((workers, dim)))


def init_fedavg_state(dim: int) -> FedAvgState:
    return FedAvgState(round_index=0, weights=np.zeros(dim))


def _round_step(cfg: TrainConfig, i: int) -> float:
    if cfg.lr_schedule == "inv-sqrt":
        return step_size(i, cfg.step_c)
    return cfg.lr


def _round_master_seed(cfg: TrainConfig, i: int) -> int:
    return int(_stream(cfg.master_seed, _DOM_ROUND_SEED, i).integers(0, 1 << 64, dtype=np.uint64))


def _batch_indices(cfg: TrainConfig, worker: int, i: int, available: int) -> np.ndarray:
    if cfg.batch_size is None or cfg.batch_size >= available:
        return np.arange(available)
    rng = _stream(cfg.master_seed, _DOM_BATCH, worker, i)
    return rng.choice(available, size=cfg.batch_size, replace=False)


def _sketch_gradient(
    cfg: TrainConfig,
    dims: SketchDims,
    round_seed: int,
    worker: int,
    i: int,
    vec: np.ndarray,
) -> tuple[CountSketch, PrivacyReport]:
    """The send path shared by both protocols: stats, pad, encode, validate."""
    stats = estimate_stats(vec, cfg.percentile)
    padded = pad_with_noise(vec, cfg.m_pad, stats, _stream(cfg.master_seed, _DOM_PAD, worker, i))
    sk = new_sketch(dims, round_seed)
    sk.encode(padded)
    return validate_and_noise(
        sk, stats.with_padding(cfg.m_pad), cfg.eps_target,
        _stream(cfg.master_seed, _DOM_NOISE, worker, i),
    )


def _ordered_map(task, items: Sequence[int], parallelism: int) -> list:
    if parallelism <= 1 or len(items) <= 1:
        return [task(it) for it in items]
    with ThreadPoolExecutor(max_workers=parallelism) as pool:
        return list(pool.map(task, items))


def _merge_and_average(sketches: list[CountSketch]) -> CountSketch:
    merged = sketches[0].copy()
    for sk in sketches[1:]:
        merged.merge(sk)
    merged.scale(1.0 / len(sketches))
    return merged


def sgd_round(
    state: SgdState,
    cfg: TrainConfig,
    partition: Partition,
    loss: LossSpec,
    parallelism: int = 1,
) -> tuple[SgdState, RoundResult]:
    """One synchronous round of sketch-compressed distributed SGD."""
    m = cfg.workers
    if partition.workers != m or state.weights.shape[0] != m:
        raise ValueError("state, config and partition disagree on the worker count")
    i = state.round_index + 1
    eta = _round_step(cfg, i)
    dim = state.weights.shape[1]
    dims = resolve_dims(cfg, dim, SGD_MODE)
    round_seed = _round_master_seed(cfg, i)

    def worker_task(wk: int):
        Xw, yw = partition.parts[wk]
        idx = _batch_indices(cfg, wk, i, Xw.shape[0])
        g = gradient(Model(state.weights[wk]), loss, (Xw[idx], yw[idx]))
        sk, report = _sketch_gradient(cfg, dims, round_seed, wk, i, g)
        return g, sk, report

    results = _ordered_map(worker_task, range(m), parallelism)
    merged = _merge_and_average([sk for _, sk, _ in results])
    queried = merged.query_all()[:dim]

    f = effective_fraction(cfg, SGD_MODE)
    new_weights = np.empty_like(state.weights)
    grad_sq_max = 0.0
    for wk, (g, _, _) in enumerate(results):
        corrected = error_correct(queried, g, f)
        new_weights[wk] = state.weights[wk] - eta * corrected
        grad_sq_max = max(grad_sq_max, float(g @ g))

    spread = float(np.max(new_weights.max(axis=0) - new_weights.min(axis=0))) if m > 1 else 0.0
    result = RoundResult(
        round_index=i,
        step=eta,
        dims=dims,
        round_seed=round_seed,
        privacy=tuple(rep for _, _, rep in results),
        participants=tuple(range(m)),
        bytes_per_worker=serialized_size(dims),
        grad_sq_norm_max=grad_sq_max,
        weight_spread=spread,
        merged=merged,
    )
    return SgdState(round_index=i, weights=new_weights), result


def _local_epochs(
    cfg: TrainConfig,
    loss: LossSpec,
    Xw: np.ndarray,
    yw: np.ndarray,
    start: np.ndarray,
    eta: float,
    worker: int,
    i: int,
) -> np.ndarray:
    w = start.copy()
    n_local = Xw.shape[0]
    batch = n_local if cfg.batch_size is None else min(cfg.batch_size, n_local)
    for epoch in range(cfg.local_epochs):
        order = _stream(cfg.master_seed, _DOM_BATCH, worker, i, epoch).permutation(n_local)
        for lo in range(0, n_local, batch):
            idx = order[lo : lo + batch]
            w -= eta * gradient(Model(w), loss, (Xw[idx], yw[idx]))
    return w


def fedavg_round(
    state: FedAvgState,
    cfg: TrainConfig,
    partition: Partition,
    loss: LossSpec,
    rng: np.random.Generator,
    parallelism: int = 1,
) -> tuple[FedAvgState, RoundResult]:
    """One round of sketch-compressed federated averaging.

    The passed rng drives device sampling only; everything else uses keyed
    streams. Error correction is skipped in this mode (local gradients are
    stale against the aggregated delta); a positive configured fraction only
    warns.
    """
    m = cfg.workers
    if partition.workers != m:
        raise ValueError("config and partition disagree on the worker count")
    if effective_fraction(cfg, FEDAVG_MODE) > 0:
        warnings.warn("error correction is ignored in federated averaging", stacklevel=2)
    i = state.round_index + 1
    eta = _round_step(cfg, i)
    dim = state.weights.shape[0]
    dims = resolve_dims(cfg, dim, FEDAVG_MODE)
    round_seed = _round_master_seed(cfg, i)

    k_dev = cfg.devices_per_round if cfg.devices_per_round is not None else m
    if cfg.sample_weights is not None:
        p = np.asarray(cfg.sample_weights, dtype=np.float64)
    else:
        counts = np.array([part[0].shape[0] for part in partition.parts], dtype=np.float64)
        p = counts / counts.sum()
    participants = tuple(sorted(int(v) for v in rng.choice(m, size=k_dev, replace=False, p=p)))

    def device_task(wk: int):
        Xw, yw = partition.parts[wk]
        local = _local_epochs(cfg, loss, Xw, yw, state.weights, eta, wk, i)
        delta = local - state.weights
        sk, report = _sketch_gradient(cfg, dims, round_seed, wk, i, delta)
        return delta, sk, report

    results = _ordered_map(device_task, participants, parallelism)
    merged = _merge_and_average([sk for _, sk, _ in results])
    delta_hat = merged.query_all()[:dim]
    new_weights = state.weights + delta_hat

    grad_sq_max = max((float(d @ d) for d, _, _ in results), default=0.0)
    result = RoundResult(
        round_index=i,
        step=eta,
        dims=dims,
        round_seed=round_seed,
        privacy=tuple(rep for _, _, rep in results),
        participants=participants,
        bytes_per_worker=serialized_size(dims),
        grad_sq_norm_max=grad_sq_max,
        weight_spread=0.0,
        merged=merged,
    )
    return FedAvgState(round_index=i, weights=new_weights), result


def sampling_rng(cfg: TrainConfig) -> np.random.Generator:
    """The device-sampling stream for a federated run."""
    return _stream(cfg.master_seed, _DOM_SAMPLE)


@dataclass
class TrainHistory:
    """Raw trajectory of a run, as needed by the convergence harness."""

    X: np.ndarray
    y: np.ndarray
    c: float
    iterates: list[np.ndarray] = field(default_factory=list)
    grad_sq_norms: list[float] = field(default_factory=list)


@dataclass(frozen=True)
class ConvergenceReport:
    """Measured averaged-iterate suboptimality against the analytic curve.

    The curve is (R^2/(2c) + c*sqrt((i+1)/i)*(n*mu^2+1)*G^2) / sqrt(i) with
    mu = sqrt(e/k), G^2 the largest measured squared gradient norm, and R^2
    the largest measured squared distance to the optimum. It holds with
    probability >= 1 - delta per run, so a violation report carries the round.
    """

    suboptimality: np.ndarray
    bound: np.ndarray
    g_sq: float
    r_sq: float
    mu: float
    c: float
    delta: float
    holds: bool
    violation_round: int | None


def least_squares_optimum(X: np.ndarray, y: np.ndarray, l2: float = 0.0) -> np.ndarray:
    """Closed-form minimizer of 0.5*mean((Xw - y)^2) + 0.5*l2*|w|^2."""
    n = X.shape[0]
    gram = X.T @ X / n + l2 * np.eye(X.shape[1])
    return np.linalg.solve(gram, X.T @ y / n)


def convergence_check(
    history: TrainHistory,
    loss: LossSpec,
    dims: SketchDims,
    delta: float | None = None,
) -> ConvergenceReport:
    """Check F(running mean of iterates) - F(x*) against the analytic curve.

    history.iterates[j] must be the weights entering round j+1 (so index 0 is
    the initial point), one entry per completed round.
    """
    if loss.kind != LEAST_SQUARES:
        raise ValueError("the convergence harness supports least squares only")
    if not history.iterates:
        raise ValueError("history has no iterates")
    if delta is None:
        delta = math.exp(-dims.t)
    x_star = least_squares_optimum(history.X, history.y, loss.l2)
    f_star = loss_value(Model(x_star), loss, history.X, history.y)

    iterates = np.asarray(history.iterates)  # (T, dim)
    rounds = iterates.shape[0]
    averages = np.cumsum(iterates, axis=0) / np.arange(1, rounds + 1)[:, None]
    residuals = averages @ history.X.T - history.y  # (T, N)
    f_bar = 0.5 * np.mean(residuals * residuals, axis=1)
    f_bar += 0.5 * loss.l2 * np.einsum("ij,ij->i", averages, averages)
    subopt = f_bar - f_star

    g_sq = max(history.grad_sq_norms) if history.grad_sq_norms else 0.0
    r_sq = float(np.max(np.sum((iterates - x_star) ** 2, axis=1)))
    mu = math.sqrt(math.e / dims.k)
    i = np.arange(1, rounds + 1, dtype=np.float64)
    bound = r_sq / (2.0 * history.c) + history.c * np.sqrt((i + 1.0) / i) * (
        dims.n * mu * mu + 1.0
    ) * g_sq
    bound = bound / np.sqrt(i)

    violations = np.nonzero(subopt > bound)[0]
    violation_round = int(violations[0]) + 1 if violations.size else None
    return ConvergenceReport(
        suboptimality=subopt,
        bound=bound,
        g_sq=g_sq,
        r_sq=r_sq,
        mu=mu,
        c=history.c,
        delta=delta,
        holds=violation_round is None,
        violation_round=violation_round,
    )
