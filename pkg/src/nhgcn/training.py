"""Alternating NH estimation / model optimization with early stopping."""

from __future__ import annotations

import logging
import time
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from typing import Mapping, Sequence

import numpy as np

from .autodiff import Adam
from .graph import Graph, KHopIndex, khop_index
from .metrics import MaskPair, NhVector, make_masks, masking_accuracy, nh_update, nh_values
from .model import (
    ConfigError,
    GraphOperators,
    ModelConfig,
    Params,
    combiner_weights,
    forward,
    init_params,
    loss_and_grad,
    train_targets,
)

log = logging.getLogger(__name__)

LABEL_SOURCES = ("predicted_all", "train_truth_plus_predicted")


class TrainingDiverged(RuntimeError):
    """The training loss became non-finite."""


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 0.01
    weight_decay: float = 5e-4
    max_epochs: int = 500
    patience: int = 100
    seed: int = 0
    split_ratios: tuple[float, float, float] = (0.6, 0.2, 0.2)
    nh_label_source: str = "predicted_all"

    def __post_init__(self) -> None:
        object.__setattr__(self, "split_ratios", tuple(float(r) for r in self.split_ratios))
        if len(self.split_ratios) != 3 or abs(sum(self.split_ratios) - 1.0) > 1e-9:
            raise ConfigError(f"split ratios must be three numbers summing to 1, got {self.split_ratios}")
        if min(self.split_ratios) <= 0:
            raise ConfigError("split ratios must be positive")
        if self.max_epochs < 1:
            raise ConfigError("max_epochs must be >= 1")
        if not 1 <= self.patience <= self.max_epochs:
            raise ConfigError("patience must be in [1, max_epochs]")
        if self.nh_label_source not in LABEL_SOURCES:
            raise ConfigError(f"nh_label_source must be one of {LABEL_SOURCES}")
        if self.lr <= 0 or self.weight_decay < 0:
            raise ConfigError("lr must be positive and weight_decay non-negative")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["split_ratios"] = list(self.split_ratios)
        return d

    @classmethod
    def from_dict(cls, d: Mapping) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown train config keys: {sorted(unknown)}")
        return cls(**d)


@dataclass(frozen=True)
class Split:
    train: np.ndarray
    val: np.ndarray
    test: np.ndarray


def make_split(n: int, seed: int, ratios: Sequence[float] = (0.6, 0.2, 0.2)) -> Split:
    """Seeded uniform random partition of ``range(n)`` into train/val/test."""
    if n < 5:
        raise ValueError(f"need at least 5 nodes to split, got {n}")
    if len(ratios) != 3 or min(ratios) <= 0 or abs(sum(ratios) - 1.0) > 1e-9:
        raise ValueError(f"degenerate split ratios {tuple(ratios)}")
    perm = np.random.default_rng(seed).permutation(n)
    n_train = int(round(ratios[0] * n))
    n_val = int(round(ratios[1] * n))
    if n_train < 1 or n_val < 1 or n_train + n_val >= n:
        raise ValueError(f"split ratios {tuple(ratios)} leave an empty part for n={n}")
    return Split(
        train=np.sort(perm[:n_train]),
        val=np.sort(perm[n_train:n_train + n_val]),
        test=np.sort(perm[n_train + n_val:]),
    )


@dataclass
class EpochLog:
    epoch: int
    loss: float
    acc_train: float
    acc_val: float
    acc_test: float
    nh_updated: bool
    mask_acc: float | None = None
    alpha: tuple[float, ...] | None = None
    n_low: int = 0


@dataclass
class RunResult:
    epochs: list[EpochLog]
    best_epoch: int
    best_val: float
    test_acc: float
    # test accuracy using the NH vector refreshed at the best epoch (for comparison)
    test_acc_final_masks: float | None
    best_params: Params
    best_masks: MaskPair | None
    nh_history: list[tuple[int, NhVector]] = field(default_factory=list)
    seed: int = 0
    epoch_seconds: float = 0.0
    total_seconds: float = 0.0

    @property
    def best_val_sequence(self) -> list[float]:
        return [e.acc_val for e in self.epochs if e.nh_updated]


def _accuracy(pred_labels: np.ndarray, labels: np.ndarray, idx: np.ndarray) -> float:
    return float(np.mean(pred_labels[idx] == labels[idx])) if idx.size else float("nan")


def train_run(
    graph: Graph,
    X: np.ndarray,
    labels: np.ndarray,
    split: Split,
    mcfg: ModelConfig,
    tcfg: TrainConfig,
    *,
    truth_for_masks: np.ndarray | None = None,
    index: KHopIndex | None = None,
) -> RunResult:
    """One training run.

    Each epoch builds masks from the current NH vector, takes an Adam step on the
    training loss, evaluates, and on a strict validation improvement checkpoints
    the model and re-estimates NH from the current predictions. Stops after
    ``patience`` consecutive epochs without improvement.

    ``truth_for_masks`` (all ground-truth labels) is only used to log masking
    accuracy; it never feeds back into training.
    """
    labels = np.asarray(labels, dtype=np.int64)
    X = np.asarray(X, dtype=np.float64)
    C = mcfg.n_classes
    ops = GraphOperators(graph, mcfg) if mcfg.arch != "mlp" else None
    if mcfg.uses_masks and index is None:
        index = khop_index(graph, mcfg.hop)
    y_train = train_targets(labels, split.train, C)
    params = init_params(mcfg, tcfg.seed)
    opt = Adam(lr=tcfg.lr, weight_decay=tcfg.weight_decay)
    seeds = np.random.SeedSequence([tcfg.seed, 0x5EED])

    nh = NhVector(values=np.ones(graph.n), k=mcfg.hop, n_classes=C)
    real_masks = None
    if truth_for_masks is not None and mcfg.uses_masks:
        real_masks = make_masks(nh_values(index, truth_for_masks, C), mcfg.threshold)

    best_val, best_epoch, stale = 0.0, 0, 0
    best_params: Params = params
    # if validation never beats 0, the initial parameters and all-high masks stand
    best_masks = make_masks(nh, mcfg.threshold) if mcfg.uses_masks else None
    history: list[tuple[int, NhVector]] = [(0, nh)]
    logs: list[EpochLog] = []
    t0 = time.perf_counter()

    for epoch in range(1, tcfg.max_epochs + 1):
        masks = make_masks(nh, mcfg.threshold) if mcfg.uses_masks else None
        rng = np.random.default_rng(seeds.spawn(1)[0])
        try:
            value, grads, _ = loss_and_grad(params, X, ops, masks, mcfg, y_train, "train", rng)
        except FloatingPointError as exc:
            raise TrainingDiverged(f"epoch {epoch} (seed {tcfg.seed}): {exc}") from exc
        if not np.isfinite(value):
            raise TrainingDiverged(f"non-finite loss at epoch {epoch} (seed {tcfg.seed})")
        params = opt.step(params, grads)

        pred, _, _ = forward(params, X, ops, masks, mcfg, "eval")
        acc_val = _accuracy(pred.labels, labels, split.val)
        improved = acc_val > best_val
        alpha = combiner_weights(params)
        logs.append(
            EpochLog(
                epoch=epoch,
                loss=value,
                acc_train=_accuracy(pred.labels, labels, split.train),
                acc_val=acc_val,
                acc_test=_accuracy(pred.labels, labels, split.test),
                nh_updated=improved,
                mask_acc=masking_accuracy(masks, real_masks) if real_masks is not None else None,
                alpha=tuple(float(a) for a in alpha) if alpha is not None else None,
                n_low=int(masks.low.sum()) if masks is not None else 0,
            )
        )
        if improved:
            best_val, best_epoch, stale = acc_val, epoch, 0
            best_params = {k: v.copy() for k, v in params.items()}
            best_masks = masks
            if mcfg.uses_masks:
                source = pred.labels
                if tcfg.nh_label_source == "train_truth_plus_predicted":
                    source = pred.labels.copy()
                    source[split.train] = labels[split.train]
                nh = nh_update(index, source, C)
                history.append((epoch, nh))
        else:
            stale += 1
            if stale >= tcfg.patience:
                break

    total = time.perf_counter() - t0
    pred, _, _ = forward(best_params, X, ops, best_masks, mcfg, "eval")
    test_acc = _accuracy(pred.labels, labels, split.test)
    test_final = None
    if mcfg.uses_masks:
        pred_final, _, _ = forward(best_params, X, ops, make_masks(nh, mcfg.threshold), mcfg, "eval")
        test_final = _accuracy(pred_final.labels, labels, split.test)
    return RunResult(
        epochs=logs,
        best_epoch=best_epoch,
        best_val=best_val,
        test_acc=test_acc,
        test_acc_final_masks=test_final,
        best_params=best_params,
        best_masks=best_masks,
        nh_history=history,
        seed=tcfg.seed,
        epoch_seconds=total / max(len(logs), 1),
        total_seconds=total,
    )


@dataclass
class MultiSeedResult:
    mean: float
    std: float
    accuracies: dict[int, float]
    failed: dict[int, str]
    runs: dict[int, RunResult] = field(default_factory=dict, repr=False)


def summarize(accs: Sequence[float]) -> tuple[float, float]:
    """Mean and sample (ddof=1) standard deviation."""
    a = np.sort(np.asarray(accs, dtype=np.float64))
    if a.size == 0:
        return float("nan"), float("nan")
    if a.size < 2 or np.all(a == a[0]):
        return float(a[0]), 0.0
    std = float(np.std(a, ddof=1))
    return float(np.mean(a)), std


def multi_seed(
    graph: Graph,
    X: np.ndarray,
    labels: np.ndarray,
    mcfg: ModelConfig,
    tcfg: TrainConfig,
    seeds: Sequence[int],
    *,
    workers: int = 1,
    keep_runs: bool = False,
    truth_for_masks: bool = False,
) -> MultiSeedResult:
    """Train once per seed (the seed fixes both split and initialization) and
    report mean and sample standard deviation of test accuracy.

    Diverged runs are excluded with a warning.
    """
    if len(seeds) < 2:
        raise ValueError("multi_seed needs at least two seeds")
    index = khop_index(graph, mcfg.hop) if mcfg.uses_masks else None

    def one(seed: int) -> RunResult:
        split = make_split(graph.n, seed, tcfg.split_ratios)
        cfg = TrainConfig(**{**tcfg.to_dict(), "seed": seed})
        return train_run(
            graph, X, labels, split, mcfg, cfg,
            truth_for_masks=labels if truth_for_masks else None, index=index,
        )

    accs: dict[int, float] = {}
    failed: dict[int, str] = {}
    runs: dict[int, RunResult] = {}

    def collect(seed, fut_or_fn):
        try:
            res = fut_or_fn()
        except (TrainingDiverged, FloatingPointError) as exc:
            warnings.warn(f"seed {seed} diverged and is excluded: {exc}", RuntimeWarning, stacklevel=3)
            failed[seed] = str(exc)
            return
        accs[seed] = res.test_acc
        if keep_runs:
            runs[seed] = res

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            futures = {s: pool.submit(one, s) for s in seeds}
            for s in seeds:
                collect(s, futures[s].result)
    else:
        for s in seeds:
            collect(s, lambda s=s: one(s))
    mean, std = summarize(list(accs.values()))
    return MultiSeedResult(mean=mean, std=std, accuracies=accs, failed=failed, runs=runs)
