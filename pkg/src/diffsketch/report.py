"""Offline figure rendering for metrics files.

The experiment commands emit line-delimited records and never plot; this
module is the downstream consumer that turns a metrics file into PNG figures
next to the delimited output. Dispatch is on each record's `kind` field, so
one file can hold a mix of record types.
"""

from __future__ import annotations

import json
import math
import os
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt


def load_records(path: str | os.PathLike) -> list[dict]:
    """Parse a line-delimited metrics file."""
    records = []
    with open(path) as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                records.append(json.loads(line))
            except json.JSONDecodeError as exc:
                raise ValueError(f"bad metrics line {line_no}: {exc}") from exc
    return records


def _finite(values):
    return [v for v in values if isinstance(v, (int, float)) and math.isfinite(v)]


def fig_train_curves(rounds: list[dict]):
    """Train loss (and test accuracy when present) against the round index."""
    idx = [r["round"] for r in rounds]
    losses = [r["train_loss"] for r in rounds]
    have_acc = any(r.get("test_accuracy") is not None for r in rounds)
    fig, axes = plt.subplots(1, 2 if have_acc else 1, figsize=(10 if have_acc else 5.5, 4))
    ax_loss = axes[0] if have_acc else axes
    ax_loss.plot(idx, losses, lw=1.2)
    ax_loss.set_xlabel("round")
    ax_loss.set_ylabel("train loss")
    ax_loss.set_yscale("log")
    if have_acc:
        acc = [r.get("test_accuracy") for r in rounds]
        axes[1].plot(idx, acc, lw=1.2, color="tab:green")
        axes[1].set_xlabel("round")
        axes[1].set_ylabel("test accuracy")
        axes[1].set_ylim(0.0, 1.0)
    fig.tight_layout()
    return fig


def fig_accuracy_vs_communication(rounds: list[dict]):
    """Accuracy (or loss) against cumulative normalized communication."""
    comm = [r["cum_normalized_comm"] for r in rounds]
    have_acc = any(r.get("test_accuracy") is not None for r in rounds)
    fig, ax = plt.subplots(figsize=(5.5, 4))
    if have_acc:
        ax.plot(comm, [r.get("test_accuracy") for r in rounds], lw=1.2)
        ax.set_ylabel("test accuracy")
    else:
        ax.plot(comm, [r["train_loss"] for r in rounds], lw=1.2)
        ax.set_ylabel("train loss")
        ax.set_yscale("log")
    ax.set_xlabel("communication rounds / compression ratio")
    fig.tight_layout()
    return fig


def fig_epsilon_per_round(rounds: list[dict]):
    """Attained per-round epsilon trajectory, when any is finite."""
    idx, mean_eps, max_eps = [], [], []
    for r in rounds:
        lo, hi = r.get("eps_attained_mean"), r.get("eps_attained_max")
        if lo is None and hi is None:
            continue
        idx.append(r["round"])
        mean_eps.append(lo)
        max_eps.append(hi)
    if not idx:
        return None
    fig, ax = plt.subplots(figsize=(5.5, 4))
    ax.plot(idx, mean_eps, lw=1.2, label="mean over workers")
    ax.plot(idx, max_eps, lw=1.2, ls="--", label="max over workers")
    ax.set_xlabel("round")
    ax.set_ylabel("attained epsilon")
    ax.legend()
    fig.tight_layout()
    return fig


def fig_privacy_sweep(points: list[dict]):
    """Analytic epsilon against compression ratio; undefined points marked."""
    defined = [p for p in points if isinstance(p.get("eps"), (int, float))]
    undefined = [p for p in points if p.get("eps") == "undefined"]
    fig, ax = plt.subplots(figsize=(5.5, 4))
    if defined:
        xs = [p["ratio"] for p in defined]
        ys = [p["eps"] for p in defined]
        ax.plot(xs, ys, "o-", lw=1.2)
        ax.set_yscale("log")
    for p in undefined:
        ax.axvline(p["ratio"], color="0.8", ls=":", lw=0.8)
    ax.set_xscale("log")
    ax.set_xlabel("compression ratio")
    ax.set_ylabel("epsilon")
    fig.tight_layout()
    return fig


def fig_bench(trials: list[dict]):
    """Per-trial fraction of coordinates estimated within the error bound."""
    fig, ax = plt.subplots(figsize=(5.5, 4))
    ax.plot([t["trial"] for t in trials], [t["frac_within"] for t in trials], "o", ms=3)
    ax.set_xlabel("trial")
    ax.set_ylabel("fraction within error bound")
    ax.set_ylim(min(0.9, min(t["frac_within"] for t in trials) - 0.02), 1.001)
    fig.tight_layout()
    return fig


def fig_grad_hist(record: dict):
    """Bar plot of one stored gradient histogram."""
    edges = record["edges"]
    counts = record["counts"]
    widths = [b - a for a, b in zip(edges[:-1], edges[1:])]
    fig, ax = plt.subplots(figsize=(5.5, 4))
    ax.bar(edges[:-1], counts, width=widths, align="edge", edgecolor="none")
    ax.set_xlabel("gradient value")
    ax.set_ylabel("count")
    ax.set_title(
        f"round {record['round']}, mean {record['mean']:.2e}, "
        f"excess kurtosis {record['excess_kurtosis']:.2f}"
    )
    fig.tight_layout()
    return fig


def render_metrics(records: list[dict], outdir: str | os.PathLike) -> list[Path]:
    """Render every figure supported by the records; returns written paths."""
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    written: list[Path] = []

    def save(fig, name: str) -> None:
        if fig is None:
            return
        path = outdir / name
        fig.savefig(path, dpi=150)
        plt.close(fig)
        written.append(path)

    rounds = [r for r in records if r.get("kind") == "round"]
    if rounds:
        save(fig_train_curves(rounds), "train_curves.png")
        save(fig_accuracy_vs_communication(rounds), "accuracy_vs_communication.png")
        save(fig_epsilon_per_round(rounds), "epsilon_per_round.png")
    sweep = [r for r in records if r.get("kind") == "sweep-point" and "error" not in r]
    if sweep:
        save(fig_privacy_sweep(sweep), "privacy_sweep.png")
    trials = [r for r in records if r.get("kind") == "trial"]
    if trials:
        save(fig_bench(trials), "sketch_bench.png")
    for rec in records:
        if rec.get("kind") == "grad-hist":
            save(fig_grad_hist(rec), f"grad_hist_round_{rec['round']}.png")
    return written
