"""Neighborhood homophily, node homophily, NH masks and accuracy breakdowns."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .graph import Graph, KHopIndex

N_BINS = 10


@dataclass(frozen=True)
class NhVector:
    values: np.ndarray
    k: int
    n_classes: int
    normalized: bool = False
    # class attaining the max count per node (lowest id on ties, -1 if isolated)
    dominant: np.ndarray | None = field(default=None, compare=False, repr=False)

    def __len__(self) -> int:
        return self.values.size


@dataclass(frozen=True)
class MaskPair:
    """Complementary 0/1 diagonals: ``low[i] + high[i] == 1`` for every node."""

    low: np.ndarray
    high: np.ndarray
    threshold: float

    @property
    def n(self) -> int:
        return self.low.size


@dataclass(frozen=True)
class BinTable:
    """Accuracy per metric bin ``[0, .1), [.1, .2), ..., [.9, 1.]``.

    ``accuracy[b]`` is NaN for empty bins.
    """

    edges: np.ndarray
    count: np.ndarray
    accuracy: np.ndarray

    def present(self) -> np.ndarray:
        return self.count > 0


def _check_labels(labels: np.ndarray, n_classes: int) -> np.ndarray:
    labels = np.asarray(labels, dtype=np.int64)
    if n_classes < 2:
        raise ValueError(f"need at least 2 classes, got {n_classes}")
    if labels.size and (labels.min() < 0 or labels.max() >= n_classes):
        raise ValueError(f"labels must lie in [0, {n_classes})")
    return labels


def class_counts(idx: KHopIndex, labels: np.ndarray, n_classes: int) -> np.ndarray:
    """``counts[i, c] = |{j in N(i, k) : labels[j] == c}|``."""
    onehot = sp.csr_matrix(
        (np.ones(labels.size), (np.arange(labels.size), labels)),
        shape=(labels.size, n_classes),
    )
    return np.asarray((idx.matrix() @ onehot).todense())


def nh_values(idx: KHopIndex, labels: np.ndarray, n_classes: int | None = None) -> NhVector:
    """Share of the most frequent class among each node's k-hop neighbors.

    The node's own label is not counted. Isolated nodes get 1.
    """
    labels = np.asarray(labels, dtype=np.int64)
    if n_classes is None:
        n_classes = int(labels.max()) + 1 if labels.size else 2
        n_classes = max(n_classes, 2)
    labels = _check_labels(labels, n_classes)
    if labels.size != idx.n:
        raise ValueError(f"{labels.size} labels for a {idx.n}-node index")
    counts = class_counts(idx, labels, n_classes)
    sizes = idx.sizes()
    top = counts.max(axis=1) if counts.size else np.zeros(idx.n)
    dominant = counts.argmax(axis=1) if counts.size else np.zeros(idx.n, dtype=np.int64)
    values = np.ones(idx.n, dtype=np.float64)
    nz = sizes > 0
    values[nz] = top[nz] / sizes[nz]
    dominant = np.where(nz, dominant, -1)
    return NhVector(values=values, k=idx.k, n_classes=n_classes, dominant=dominant)


def nh_update(idx: KHopIndex, predicted: np.ndarray, n_classes: int) -> NhVector:
    """Re-estimate NH from model predictions (same arithmetic as :func:`nh_values`)."""
    return nh_values(idx, predicted, n_classes)


def node_homophily(g: Graph, labels: np.ndarray) -> tuple[np.ndarray, float]:
    """Per-node share of direct neighbors with the node's own label, and its mean.

    Isolated nodes score 0.
    """
    labels = np.asarray(labels, dtype=np.int64)
    rows = np.repeat(np.arange(g.n), g.degree)
    same = (labels[rows] == labels[g.indices]).astype(np.float64)
    hits = np.bincount(rows, weights=same, minlength=g.n)
    h = np.zeros(g.n, dtype=np.float64)
    nz = g.degree > 0
    h[nz] = hits[nz] / g.degree[nz]
    return h, float(h.mean()) if g.n else 0.0


def normalize_metric(v: NhVector | np.ndarray) -> NhVector | np.ndarray:
    """Map raw NH from ``[1/C, 1]`` onto ``[0, 1]``.

    Plain arrays (node homophily) are already on ``[0, 1]`` and are returned as is.
    """
    if not isinstance(v, NhVector):
        return np.asarray(v, dtype=np.float64)
    if v.n_classes < 2:
        raise ValueError(f"need at least 2 classes, got {v.n_classes}")
    if v.normalized:
        return v
    lo = 1.0 / v.n_classes
    vals = (v.values - lo) / (1.0 - lo)
    return NhVector(
        values=np.clip(vals, 0.0, 1.0), k=v.k, n_classes=v.n_classes, normalized=True, dominant=v.dominant
    )


def make_masks(v: NhVector | np.ndarray, threshold: float) -> MaskPair:
    """``low[i] = 1`` iff ``NH[i] <= threshold`` (raw scale); ``high = 1 - low``."""
    vals = v.values if isinstance(v, NhVector) else np.asarray(v, dtype=np.float64)
    low = (vals <= threshold).astype(np.int8)
    return MaskPair(low=low, high=(1 - low).astype(np.int8), threshold=float(threshold))


def masking_accuracy(predicted: MaskPair, real: MaskPair) -> float:
    if predicted.n != real.n:
        raise ValueError("mask pairs cover different node counts")
    if predicted.n == 0:
        return 1.0
    return float(np.mean(predicted.low == real.low))


def bin_index(metric: np.ndarray) -> np.ndarray:
    b = np.floor(np.asarray(metric, dtype=np.float64) * N_BINS).astype(np.int64)
    return np.clip(b, 0, N_BINS - 1)


def bin_accuracy(metric: NhVector | np.ndarray, correct: np.ndarray) -> BinTable:
    """Group nodes into ten equal-width metric bins and average ``correct`` per bin."""
    vals = metric.values if isinstance(metric, NhVector) else np.asarray(metric, dtype=np.float64)
    correct = np.asarray(correct, dtype=np.float64)
    if vals.shape != correct.shape:
        raise ValueError("metric and correctness vectors differ in length")
    b = bin_index(vals)
    count = np.bincount(b, minlength=N_BINS)
    hits = np.bincount(b, weights=correct, minlength=N_BINS)
    acc = np.full(N_BINS, np.nan)
    np.divide(hits, count, out=acc, where=count > 0)
    return BinTable(edges=np.linspace(0.0, 1.0, N_BINS + 1), count=count, accuracy=acc)
