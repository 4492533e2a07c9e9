"""Experiment command line.

Subcommands: `sketch-bench` (estimation-error benchmark), `privacy-sweep`
(analytic epsilon across compression ratios), `train` (sketch-compressed
distributed SGD or federated averaging), `grad-hist` (gradient-distribution
snapshots during training), and `report` (render figures from a metrics
file).

Every command is deterministic in (flags, seed): records are emitted as
line-delimited JSON with a pinned schema version, plus a per-round CSV next
to the train output. A `timestamp` field is added to each record unless
--no-timestamp is given. Option values resolve with precedence
defaults < --config file < DIFFSKETCH_SEED < explicit flags. Exit codes:
0 success, 2 usage error, 3 runtime failure.
"""

from __future__ import annotations

import argparse
import csv as csv_mod
import json
import math
import os
import sys
from dataclasses import asdict, dataclass
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import data as data_mod
from . import learn
from .privacy import GradientStats, PrivacyReport, sketch_epsilon
from .sketch import SketchDims, compression_ratio, dims_for_error, new_sketch, serialize

SCHEMA_VERSION = 1
ENV_SEED = "DIFFSKETCH_SEED"
DEFAULT_SWEEP_RATIOS = "2,5,10,15,20,30,50,75,100"
DEFAULT_COMPRESSION = 50.0
TEST_SEED_XOR = 0x7E57
TEST_SAMPLES = 2000


class UsageError(Exception):
    """Bad flag combination or value; mapped to exit code 2."""


# ---------------------------- metrics records ---------------------------- #


@dataclass(frozen=True)
class RoundMetrics:
    """One train round as reported: losses, privacy, and communication."""

    round: int
    train_loss: float
    test_loss: float | None
    test_accuracy: float | None
    eps_attained_mean: float
    eps_attained_max: float
    noise_added: int
    bytes_per_worker: int
    cum_normalized_comm: float
    compression_ratio: float
    step: float


ROUND_CSV_FIELDS = [
    "round", "train_loss", "test_loss", "test_accuracy", "eps_attained_mean",
    "eps_attained_max", "noise_added", "bytes_per_worker",
    "cum_normalized_comm", "compression_ratio", "step",
]


def _json_safe(value):
    if isinstance(value, dict):
        return {k: _json_safe(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_json_safe(v) for v in value]
    if isinstance(value, np.ndarray):
        return [_json_safe(v) for v in value.tolist()]
    if isinstance(value, (bool, np.bool_)):
        return bool(value)
    if isinstance(value, (int, np.integer)):
        return int(value)
    if isinstance(value, (float, np.floating)):
        v = float(value)
        return v if math.isfinite(v) else None
    return value


def _csv_cell(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return repr(value) if math.isfinite(value) else ""
    return str(value)


class MetricsWriter:
    """Writes records to the output path (or stdout) plus an optional CSV."""

    def __init__(self, out: str | None, no_timestamp: bool):
        self.out = Path(out) if out else None
        self.no_timestamp = no_timestamp
        self._fh = open(self.out, "w") if self.out else sys.stdout
        self._csv_rows: list[dict] = []

    def emit(self, record: dict) -> None:
        record = {"schema_version": SCHEMA_VERSION, **record}
        if not self.no_timestamp:
            record["timestamp"] = datetime.now(timezone.utc).isoformat()
        self._fh.write(json.dumps(_json_safe(record), sort_keys=True) + "\n")

    def add_csv_row(self, row: dict) -> None:
        self._csv_rows.append(row)

    def close(self) -> None:
        if self.out:
            self._fh.close()
            if self._csv_rows:
                csv_path = self.out.with_suffix(".csv")
                with open(csv_path, "w", newline="") as fh:
                    writer = csv_mod.writer(fh)
                    writer.writerow(ROUND_CSV_FIELDS)
                    for row in self._csv_rows:
                        writer.writerow([_csv_cell(row.get(f)) for f in ROUND_CSV_FIELDS])


# ---------------------------- option resolution ---------------------------- #


def _load_config_file(path: str, known: set[str]) -> dict:
    try:
        with open(path) as fh:
            values = json.load(fh)
    except FileNotFoundError as exc:
        raise UsageError(f"config file not found: {path}") from exc
    except json.JSONDecodeError as exc:
        raise UsageError(f"config file is not valid JSON: {exc}") from exc
    if not isinstance(values, dict):
        raise UsageError("config file must hold a JSON object")
    resolved = {}
    for key, value in values.items():
        dest = key.replace("-", "_")
        if dest not in known:
            raise UsageError(f"unknown config key {key!r}")
        resolved[dest] = value
    return resolved


def resolve_options(ns: argparse.Namespace, defaults: dict) -> dict:
    """defaults < config file < DIFFSKETCH_SEED < explicit flags."""
    flags = {k: v for k, v in vars(ns).items() if k != "command" and v is not None}
    effective = dict(defaults)
    config_path = flags.get("config", defaults.get("config"))
    if config_path:
        effective.update(_load_config_file(config_path, set(defaults)))
    env_seed = os.environ.get(ENV_SEED)
    if env_seed is not None and "seed" in defaults:
        try:
            effective["seed"] = int(env_seed)
        except ValueError as exc:
            raise UsageError(f"{ENV_SEED} must be an integer, got {env_seed!r}") from exc
    effective.update(flags)
    return effective


def _parse_skew(text: str):
    if text.lower() in ("", "none", "iid"):
        return None
    try:
        return int(text)
    except ValueError:
        pass
    try:
        return float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"skew must be an int, float or 'none', got {text!r}")


def _parse_int_list(text: str, flag: str) -> list[int]:
    try:
        return [int(v) for v in text.split(",") if v.strip() != ""]
    except ValueError as exc:
        raise UsageError(f"{flag} must be a comma-separated integer list") from exc


def _parse_float_list(text: str, flag: str) -> list[float]:
    try:
        return [float(v) for v in text.split(",") if v.strip() != ""]
    except ValueError as exc:
        raise UsageError(f"{flag} must be a comma-separated number list") from exc


# ---------------------------- dataset assembly ---------------------------- #


@dataclass
class DatasetBundle:
    partition: data_mod.Partition
    loss: learn.LossSpec
    classes: int | None
    test_X: np.ndarray | None
    test_y: np.ndarray | None
    w_star: np.ndarray | None


def build_dataset(opt: dict) -> DatasetBundle:
    spec = opt["dataset"]
    seed = opt["seed"]
    workers = opt["workers"]
    l2 = opt["l2"]
    if spec == "synth-cls":
        features = opt["features"] if opt["features"] is not None else 784
        classes = opt["classes"]
        partition = data_mod.synth_classification(
            workers, opt["samples"], features, classes, opt["skew"], seed
        )
        test = data_mod.synth_classification(
            1, TEST_SAMPLES, features, classes, None, seed ^ TEST_SEED_XOR
        )
        test_X, test_y = test.pooled()
        return DatasetBundle(
            partition, learn.LossSpec(learn.LOGISTIC, l2), classes, test_X, test_y, None
        )
    if spec == "synth-reg":
        features = opt["features"] if opt["features"] is not None else 200
        partition, w_star = data_mod.synth_regression(
            workers, opt["samples"], features, opt["noise_sd"], seed
        )
        rng = np.random.default_rng(np.random.SeedSequence(seed ^ TEST_SEED_XOR, spawn_key=(3,)))
        test_X = rng.normal(size=(TEST_SAMPLES, features))
        test_y = test_X @ w_star + opt["noise_sd"] * rng.normal(size=TEST_SAMPLES)
        return DatasetBundle(
            partition, learn.LossSpec(learn.LEAST_SQUARES, l2), None, test_X, test_y, w_star
        )
    if spec.startswith("csv:"):
        X, y = data_mod.load_csv(spec[4:])
        partition = data_mod.partition_rows(X, y, workers, seed)
        return DatasetBundle(
            partition, learn.LossSpec(learn.LEAST_SQUARES, l2), None, None, None, None
        )
    raise UsageError(f"unknown dataset {spec!r}; use synth-reg, synth-cls or csv:PATH")


def build_train_config(opt: dict) -> learn.TrainConfig:
    eps = opt["eps"]
    k = opt["k"]
    compression = opt["compression"]
    if k is None and compression is None:
        compression = DEFAULT_COMPRESSION
    try:
        return learn.TrainConfig(
            workers=opt["workers"],
            rounds=opt["rounds"],
            batch_size=opt["batch"] if opt["batch"] and opt["batch"] > 0 else None,
            lr=opt["lr"],
            lr_schedule=opt["lr_schedule"],
            step_c=opt["step_c"],
            eps_target=eps if eps is not None else math.inf,
            t=opt["t"],
            k=k,
            compression=compression,
            m_pad=opt["pad"],
            error_correction_fraction=opt["errcorr_frac"],
            devices_per_round=opt["devices_per_round"],
            local_epochs=opt["local_epochs"],
            master_seed=opt["seed"],
        )
    except ValueError as exc:
        raise UsageError(str(exc)) from exc


# ---------------------------- train ---------------------------- #


def _eval_weights(mode: str, state) -> np.ndarray:
    if mode == learn.SGD_MODE:
        return state.weights.mean(axis=0)
    return state.weights


def _evaluate(bundle: DatasetBundle, weights: np.ndarray, pooled) -> tuple[float, float | None, float | None]:
    model = learn.Model(weights)
    train_loss = learn.loss_value(model, bundle.loss, pooled[0], pooled[1])
    test_loss = test_acc = None
    if bundle.test_X is not None:
        test_loss = learn.loss_value(model, bundle.loss, bundle.test_X, bundle.test_y)
        if bundle.loss.kind == learn.LOGISTIC:
            test_acc = learn.accuracy(model, bundle.test_X, bundle.test_y)
    return train_loss, test_loss, test_acc


def _advance(mode: str, state, cfg, bundle, srng, parallelism):
    if mode == learn.SGD_MODE:
        return learn.sgd_round(state, cfg, bundle.partition, bundle.loss, parallelism)
    return learn.fedavg_round(state, cfg, bundle.partition, bundle.loss, srng, parallelism)


def _init_state(mode: str, cfg: learn.TrainConfig, dim: int):
    if mode == learn.SGD_MODE:
        return learn.init_sgd_state(cfg.workers, dim)
    return learn.init_fedavg_state(dim)


def cmd_train(opt: dict) -> int:
    mode = opt["mode"]
    if mode not in (learn.SGD_MODE, learn.FEDAVG_MODE):
        raise UsageError(f"mode must be {learn.SGD_MODE} or {learn.FEDAVG_MODE}, got {mode!r}")
    cfg = build_train_config(opt)
    bundle = build_dataset(opt)
    dim = learn.model_dim(bundle.loss, bundle.partition.feature_dim, bundle.classes)
    state = _init_state(mode, cfg, dim)
    srng = learn.sampling_rng(cfg)
    pooled = bundle.partition.pooled()
    writer = MetricsWriter(opt["out"], opt["no_timestamp"])
    last_result = None
    try:
        for _ in range(cfg.rounds):
            state, result = _advance(mode, state, cfg, bundle, srng, opt["parallel"])
            last_result = result
            train_loss, test_loss, test_acc = _evaluate(bundle, _eval_weights(mode, state), pooled)
            ratio = compression_ratio(result.dims)
            eps_values = [rep.eps_attained for rep in result.privacy]
            metrics = RoundMetrics(
                round=result.round_index,
                train_loss=train_loss,
                test_loss=test_loss,
                test_accuracy=test_acc,
                eps_attained_mean=float(np.mean(eps_values)),
                eps_attained_max=float(np.max(eps_values)),
                noise_added=sum(rep.noise_added for rep in result.privacy),
                bytes_per_worker=result.bytes_per_worker,
                cum_normalized_comm=result.round_index / ratio,
                compression_ratio=ratio,
                step=result.step,
            )
            record = {"kind": "round", **asdict(metrics)}
            record["participants"] = list(result.participants)
            record["privacy"] = [asdict(rep) for rep in result.privacy]
            writer.emit(record)
            writer.add_csv_row(asdict(metrics))
        d = last_result.dims
        summary = {
            "kind": "summary",
            "mode": mode,
            "rounds": cfg.rounds,
            "dims": {"t": d.t, "k": d.k, "n": d.n},
            "compression_ratio": compression_ratio(d),
            "final_train_loss": train_loss,
            "final_test_loss": test_loss,
            "final_test_accuracy": test_acc,
            "eps_attained_mean": float(np.mean([r.eps_attained for r in last_result.privacy])),
            "total_bytes_per_worker": cfg.rounds * last_result.bytes_per_worker,
        }
        writer.emit(summary)
    finally:
        writer.close()
    if opt["dump_sketch"]:
        Path(opt["dump_sketch"]).write_bytes(serialize(last_result.merged))
    return 0


# ---------------------------- sketch-bench ---------------------------- #


def cmd_sketch_bench(opt: dict) -> int:
    has_error = opt["mu"] is not None or opt["delta"] is not None
    has_shape = opt["t"] is not None or opt["k"] is not None
    if has_error and has_shape:
        raise UsageError("give either --mu/--delta or --t/--k, not both")
    n = opt["n"]
    if has_shape:
        if opt["t"] is None or opt["k"] is None:
            raise UsageError("--t and --k must be given together")
        dims = SketchDims(opt["t"], opt["k"], n)
        mu = math.sqrt(math.e / dims.k)
        delta = math.exp(-dims.t)
    else:
        mu = opt["mu"] if opt["mu"] is not None else 0.25
        delta = opt["delta"] if opt["delta"] is not None else 0.01
        dims = dims_for_error(mu, delta, n)
    writer = MetricsWriter(opt["out"], opt["no_timestamp"])
    failed_coords = 0
    try:
        for trial in range(opt["trials"]):
            rng = np.random.default_rng(np.random.SeedSequence(opt["seed"], spawn_key=(11, trial)))
            g = rng.normal(size=n)
            master = int(rng.integers(0, 2**64, dtype=np.uint64))
            sk = new_sketch(dims, master)
            sk.encode(g)
            err = np.abs(sk.query_all() - g) / np.linalg.norm(g)
            failed_coords += int(np.count_nonzero(err > mu))
            writer.emit({
                "kind": "trial",
                "trial": trial,
                "frac_within": float(np.mean(err <= mu)),
                "err_q50": float(np.quantile(err, 0.5)),
                "err_q90": float(np.quantile(err, 0.9)),
                "err_q99": float(np.quantile(err, 0.99)),
                "err_max": float(err.max()),
            })
        failure_rate = failed_coords / (opt["trials"] * n)
        writer.emit({
            "kind": "summary",
            "t": dims.t,
            "k": dims.k,
            "n": n,
            "trials": opt["trials"],
            "mu": mu,
            "delta": delta,
            "failure_rate": failure_rate,
            "quantile": 1.0 - failure_rate,
            "passed": failure_rate <= delta + 0.01,
        })
    finally:
        writer.close()
    return 0


# ---------------------------- privacy-sweep ---------------------------- #


def cmd_privacy_sweep(opt: dict) -> int:
    if opt["k_grid"] is not None and opt["ratio_grid"] is not None:
        raise UsageError("give either --k-grid or --ratio-grid, not both")
    n = opt["n"]
    t = opt["t"]
    stats = GradientStats(alpha=opt["alpha"], sigma2=opt["sigma2"], n=n)
    if opt["k_grid"] is not None:
        k_values = _parse_int_list(opt["k_grid"], "--k-grid")
    else:
        grid = opt["ratio_grid"] if opt["ratio_grid"] is not None else DEFAULT_SWEEP_RATIOS
        ratios = _parse_float_list(grid, "--ratio-grid")
        if any(r <= 0 for r in ratios):
            raise UsageError("--ratio-grid values must be positive")
        k_values = [max(1, round(n / (t * r))) for r in ratios]
    if not k_values:
        raise UsageError("the sweep grid is empty")
    writer = MetricsWriter(opt["out"], opt["no_timestamp"])
    points = []
    errors = 0
    try:
        for k in k_values:
            dims = SketchDims(t, k, n)
            ratio = compression_ratio(dims)
            record = {"kind": "sweep-point", "t": t, "k": k, "n": n, "ratio": ratio}
            try:
                eps = sketch_epsilon(stats, dims)
            except ValueError as exc:
                errors += 1
                record["eps"] = None
                record["error"] = str(exc)
                writer.emit(record)
                continue
            record["eps"] = eps if eps is not None else "undefined"
            points.append((ratio, math.inf if eps is None else eps))
            writer.emit(record)
        points.sort(key=lambda p: p[0])
        monotone = all(b[1] <= a[1] for a, b in zip(points, points[1:]))
        writer.emit({
            "kind": "summary",
            "points": len(k_values),
            "errors": errors,
            "monotone_nonincreasing": monotone,
        })
    finally:
        writer.close()
    return 0


# ---------------------------- grad-hist ---------------------------- #


def cmd_grad_hist(opt: dict) -> int:
    mode = opt["mode"]
    if mode not in (learn.SGD_MODE, learn.FEDAVG_MODE):
        raise UsageError(f"mode must be {learn.SGD_MODE} or {learn.FEDAVG_MODE}, got {mode!r}")
    if opt["at"] is None:
        raise UsageError("--at is required for grad-hist")
    at_rounds = sorted(set(_parse_int_list(opt["at"], "--at")))
    cfg = build_train_config(opt)
    if not at_rounds or at_rounds[0] < 0 or at_rounds[-1] > cfg.rounds:
        raise UsageError(f"--at rounds must lie in [0, {cfg.rounds}]")
    bundle = build_dataset(opt)
    dim = learn.model_dim(bundle.loss, bundle.partition.feature_dim, bundle.classes)
    state = _init_state(mode, cfg, dim)
    srng = learn.sampling_rng(cfg)
    wrng = np.random.default_rng(np.random.SeedSequence(cfg.master_seed, spawn_key=(13,)))
    worker = int(wrng.integers(cfg.workers))
    X, y = bundle.partition.parts[worker]
    writer = MetricsWriter(opt["out"], opt["no_timestamp"])

    def snapshot(round_index: int) -> None:
        weights = _eval_weights(mode, state)
        if mode == learn.SGD_MODE:
            weights = state.weights[worker]
        g = learn.gradient(learn.Model(weights), bundle.loss, (X, y))
        hist = data_mod.gradient_histogram(g, bins=opt["bins"])
        writer.emit({
            "kind": "grad-hist",
            "round": round_index,
            "worker": worker,
            "counts": hist.counts,
            "edges": hist.edges,
            "mean": hist.mean,
            "variance": hist.variance,
            "excess_kurtosis": hist.excess_kurtosis,
        })

    try:
        if at_rounds[0] == 0:
            snapshot(0)
        remaining = [r for r in at_rounds if r > 0]
        for i in range(1, (at_rounds[-1] or 0) + 1):
            state, _ = _advance(mode, state, cfg, bundle, srng, opt["parallel"])
            if remaining and i == remaining[0]:
                snapshot(i)
                remaining.pop(0)
        writer.emit({"kind": "summary", "snapshots": len(at_rounds), "worker": worker})
    finally:
        writer.close()
    return 0


# ---------------------------- report ---------------------------- #


def cmd_report(opt: dict) -> int:
    from . import report as report_mod

    metrics = Path(opt["metrics"])
    records = report_mod.load_records(metrics)
    outdir = Path(opt["outdir"]) if opt["outdir"] else metrics.parent / (metrics.stem + "_figs")
    paths = report_mod.render_metrics(records, outdir)
    for path in paths:
        print(path)
    return 0


# ---------------------------- parser / dispatch ---------------------------- #

TRAIN_DEFAULTS = {
    "mode": learn.SGD_MODE, "workers": 10, "rounds": 100, "batch": 10,
    "lr": 0.01, "lr_schedule": "const", "step_c": 0.1, "eps": None,
    "t": None, "k": None, "compression": None, "pad": 0, "errcorr_frac": None,
    "devices_per_round": None, "local_epochs": 1, "dataset": "synth-cls",
    "samples": 200, "features": None, "classes": 10, "noise_sd": 0.1,
    "skew": None, "l2": 0.0, "parallel": 1, "seed": 0, "out": None,
    "no_timestamp": False, "config": None, "dump_sketch": None,
}
HIST_DEFAULTS = {**TRAIN_DEFAULTS, "at": None, "bins": 50}
BENCH_DEFAULTS = {
    "mu": None, "delta": None, "t": None, "k": None, "n": 2000, "trials": 50,
    "seed": 0, "out": None, "no_timestamp": False, "config": None,
}
SWEEP_DEFAULTS = {
    "alpha": 0.3, "sigma2": 1.0, "n": 7850, "t": 7, "k_grid": None,
    "ratio_grid": None, "seed": 0, "out": None, "no_timestamp": False,
    "config": None,
}
REPORT_DEFAULTS = {"metrics": None, "outdir": None, "config": None}


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--seed", type=int, help="master seed (env DIFFSKETCH_SEED overrides the default)")
    p.add_argument("--out", help="metrics file path (default: stdout)")
    p.add_argument("--no-timestamp", action="store_const", const=True, dest="no_timestamp",
                   help="omit timestamps so records are byte-reproducible")
    p.add_argument("--config", help="JSON file of option values (flags take precedence)")


def _add_train_flags(p: argparse.ArgumentParser) -> None:
    _add_common(p)
    p.add_argument("--mode", choices=[learn.SGD_MODE, learn.FEDAVG_MODE])
    p.add_argument("--workers", type=int)
    p.add_argument("--rounds", type=int)
    p.add_argument("--batch", type=int, help="per-round batch size per worker (0 = full batch)")
    p.add_argument("--lr", type=float)
    p.add_argument("--lr-schedule", choices=["const", "inv-sqrt"])
    p.add_argument("--step-c", type=float, help="constant c of the c/sqrt(i) schedule")
    p.add_argument("--eps", type=float, help="per-round epsilon target (default: inf, accounting only)")
    p.add_argument("--t", type=int, help="sketch rows")
    p.add_argument("--k", type=int, help="sketch columns (conflicts with --compression)")
    p.add_argument("--compression", type=float, help="target compression ratio (conflicts with --k)")
    p.add_argument("--pad", type=int, help="synthetic padding coordinates per gradient")
    p.add_argument("--errcorr-frac", type=float, help="error-correction fraction in [0, 1]")
    p.add_argument("--devices-per-round", type=int, help="sampled devices per fedavg round")
    p.add_argument("--local-epochs", type=int, help="local epochs per fedavg round")
    p.add_argument("--dataset", help="synth-reg | synth-cls | csv:PATH")
    p.add_argument("--samples", type=int, help="samples per worker for synthetic data")
    p.add_argument("--features", type=int, help="feature dimension for synthetic data")
    p.add_argument("--classes", type=int, help="class count for synth-cls")
    p.add_argument("--noise-sd", type=float, help="label noise for synth-reg")
    p.add_argument("--skew", type=_parse_skew, help="label skew: classes per worker, or a Dirichlet alpha")
    p.add_argument("--l2", type=float, help="L2 regularization strength")
    p.add_argument("--parallel", type=int, help="worker threads per round (default 1)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="diffsketch",
        description="Sketch-compressed distributed training with a privacy accountant.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_train = sub.add_parser("train", help="run distributed SGD or federated averaging")
    _add_train_flags(p_train)
    p_train.add_argument("--dump-sketch", help="write the final merged sketch to this path")

    p_hist = sub.add_parser("grad-hist", help="histogram worker gradients during training")
    _add_train_flags(p_hist)
    p_hist.add_argument("--at", help="comma-separated round indices to snapshot")
    p_hist.add_argument("--bins", type=int, help="histogram bin count (default 50)")

    p_bench = sub.add_parser("sketch-bench", help="recovery-error benchmark for sized sketches")
    _add_common(p_bench)
    p_bench.add_argument("--mu", type=float, help="relative error target")
    p_bench.add_argument("--delta", type=float, help="failure probability target")
    p_bench.add_argument("--t", type=int, help="sketch rows (with --k, instead of --mu/--delta)")
    p_bench.add_argument("--k", type=int, help="sketch columns")
    p_bench.add_argument("--n", type=int, help="vector length (default 2000)")
    p_bench.add_argument("--trials", type=int, help="number of random vectors (default 50)")

    p_sweep = sub.add_parser("privacy-sweep", help="analytic epsilon across compression ratios")
    _add_common(p_sweep)
    p_sweep.add_argument("--alpha", type=float, help="coordinate magnitude bound")
    p_sweep.add_argument("--sigma2", type=float, help="coordinate variance")
    p_sweep.add_argument("--n", type=int, help="gradient length (default 7850)")
    p_sweep.add_argument("--t", type=int, help="sketch rows (default 7)")
    p_sweep.add_argument("--k-grid", help="comma-separated sketch widths")
    p_sweep.add_argument("--ratio-grid", help="comma-separated compression ratios")

    p_report = sub.add_parser("report", help="render figures from a metrics file")
    p_report.add_argument("--metrics", required=True, help="line-delimited JSON metrics file")
    p_report.add_argument("--outdir", help="figure directory (default: alongside the metrics file)")
    p_report.add_argument("--config", help="JSON file of option values (flags take precedence)")

    return parser


COMMANDS = {
    "train": (cmd_train, TRAIN_DEFAULTS),
    "grad-hist": (cmd_grad_hist, HIST_DEFAULTS),
    "sketch-bench": (cmd_sketch_bench, BENCH_DEFAULTS),
    "privacy-sweep": (cmd_privacy_sweep, SWEEP_DEFAULTS),
    "report": (cmd_report, REPORT_DEFAULTS),
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        ns = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else 2
    command, defaults = COMMANDS[ns.command]
    try:
        opt = resolve_options(ns, defaults)
        return command(opt)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 2
    except (OSError, ValueError, ArithmeticError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
