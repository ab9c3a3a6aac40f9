"""Figures written next to the CSV outputs.

Uses ``matplotlib.figure.Figure`` directly (no pyplot state), so rendering is
safe from worker threads and needs no display.
"""

from __future__ import annotations

from pathlib import Path
from typing import Mapping, Sequence

import numpy as np
from matplotlib.figure import Figure

from .metrics import BinTable

RC = {"figsize": (5.0, 3.4), "dpi": 120}
PALETTE = ("#1b6ca8", "#d1495b", "#66a182", "#edae49")


def _save(fig: Figure, path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.tight_layout()
    fig.savefig(path, metadata={"Software": None})
    return path


def metric_distributions(path, series: Mapping[str, np.ndarray], title: str = "") -> Path:
    """Overlaid histograms on [0, 1], one per metric, dashed line at each mean."""
    fig = Figure(**RC)
    ax = fig.add_subplot()
    bins = np.linspace(0, 1, 21)
    for color, (name, vals) in zip(PALETTE, series.items()):
        vals = np.asarray(vals, dtype=float)
        ax.hist(vals, bins=bins, density=True, alpha=0.45, color=color, label=name)
        if vals.size:
            ax.axvline(vals.mean(), color=color, linestyle="--", linewidth=1)
    ax.set_xlabel("metric value")
    ax.set_ylabel("density")
    ax.set_xlim(0, 1)
    if title:
        ax.set_title(title)
    ax.legend(frameon=False)
    return _save(fig, path)


def bin_accuracy(path, tables: Mapping[str, BinTable], xlabel: str = "metric group") -> Path:
    """Grouped bars of per-bin accuracy; empty bins are left blank."""
    fig = Figure(**RC)
    ax = fig.add_subplot()
    width = 0.8 / max(len(tables), 1)
    centers = np.arange(10)
    for k, (color, (name, t)) in enumerate(zip(PALETTE, tables.items())):
        acc = np.where(t.count > 0, t.accuracy, np.nan)
        ax.bar(centers + (k - (len(tables) - 1) / 2) * width, acc, width=width, color=color, label=name)
    ax.set_xticks(centers)
    ax.set_xticklabels([f"{lo:.1f}" for lo in np.linspace(0, 0.9, 10)], fontsize=7)
    ax.set_xlabel(xlabel)
    ax.set_ylabel("accuracy")
    ax.set_ylim(0, 1.05)
    ax.legend(frameon=False, fontsize=8)
    return _save(fig, path)


def training_curves(path, epochs: Sequence) -> Path:
    fig = Figure(**RC)
    ax = fig.add_subplot()
    ep = [e.epoch for e in epochs]
    ax.plot(ep, [e.acc_val for e in epochs], color=PALETTE[0], label="val acc")
    ax.plot(ep, [e.acc_test for e in epochs], color=PALETTE[2], label="test acc")
    if any(e.mask_acc is not None for e in epochs):
        ax.plot(ep, [np.nan if e.mask_acc is None else e.mask_acc for e in epochs],
                color=PALETTE[1], label="masking acc")
    upd = [e.epoch for e in epochs if e.nh_updated]
    if upd:
        ax.plot(upd, [epochs[u - 1].acc_val for u in upd], "k.", markersize=3, label="NH update")
    ax.set_xlabel("epoch")
    ax.set_ylabel("accuracy")
    ax.legend(frameon=False, fontsize=8)
    return _save(fig, path)


def alpha_trace(path, epochs: Sequence) -> Path | None:
    rows = [e for e in epochs if e.alpha is not None]
    if not rows:
        return None
    fig = Figure(**RC)
    ax = fig.add_subplot()
    a = np.array([e.alpha for e in rows])
    names = ("low", "high", "x") if a.shape[1] == 3 else ("graph", "x")
    for j, name in enumerate(names):
        ax.plot([e.epoch for e in rows], a[:, j], color=PALETTE[j], label=f"alpha_{name}")
    ax.set_xlabel("epoch")
    ax.set_ylabel("combiner weight")
    ax.set_ylim(0, 1)
    ax.legend(frameon=False, fontsize=8)
    return _save(fig, path)
