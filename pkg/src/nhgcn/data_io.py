"""Dataset directories, synthetic graph generators and CSV/JSON export.

Dataset directory layout (all tab separated, ``#`` lines ignored)::

    meta.tsv       name, n, f, C   one ``key<TAB>value`` per line
    edges.tsv      u  v
    features.tsv   node_id  x_1 ... x_f
    labels.tsv     node_id  class_id
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .graph import Graph, GraphInputError, build_graph
from .metrics import BinTable


class DatasetError(ValueError):
    """Base class for dataset loading problems."""


class MissingFileError(DatasetError):
    pass


class ParseError(DatasetError):
    def __init__(self, path: Path, line: int, msg: str):
        super().__init__(f"{path}:{line}: {msg}")
        self.path = path
        self.line = line


class InconsistentDataError(DatasetError):
    pass


@dataclass(frozen=True)
class Dataset:
    name: str
    graph: Graph
    X: np.ndarray
    labels: np.ndarray
    n_classes: int

    @property
    def n(self) -> int:
        return self.graph.n

    @property
    def n_features(self) -> int:
        return self.X.shape[1]

    def __post_init__(self) -> None:
        if self.X.shape[0] != self.graph.n or self.labels.shape != (self.graph.n,):
            raise InconsistentDataError("graph, features and labels disagree on node count")
        if not np.all(np.isfinite(self.X)):
            raise InconsistentDataError("features contain non-finite values")


# -- loading -------------------------------------------------------------------

REQUIRED_FILES = ("meta.tsv", "edges.tsv", "features.tsv", "labels.tsv")


def _rows(path: Path) -> Iterable[tuple[int, list[str]]]:
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip("\n").rstrip("\r")
            if not line.strip() or line.lstrip().startswith("#"):
                continue
            yield lineno, line.split("\t")


def _int(path: Path, lineno: int, s: str) -> int:
    try:
        return int(s)
    except ValueError:
        raise ParseError(path, lineno, f"expected an integer, got {s!r}") from None


def _float(path: Path, lineno: int, s: str) -> float:
    try:
        return float(s)
    except ValueError:
        raise ParseError(path, lineno, f"expected a number, got {s!r}") from None


def _read_meta(path: Path) -> dict:
    meta: dict[str, str] = {}
    for lineno, parts in _rows(path):
        if len(parts) != 2:
            raise ParseError(path, lineno, "expected 'key<TAB>value'")
        meta[parts[0].strip()] = parts[1].strip()
    missing = {"n", "f", "C"} - set(meta)
    if missing:
        raise InconsistentDataError(f"{path}: missing keys {sorted(missing)}")
    out = {"name": meta.get("name", path.parent.name)}
    for key in ("n", "f", "C"):
        try:
            out[key] = int(meta[key])
        except ValueError:
            raise InconsistentDataError(f"{path}: {key} must be an integer, got {meta[key]!r}") from None
    if out["n"] < 1 or out["f"] < 1 or out["C"] < 2:
        raise InconsistentDataError(f"{path}: need n >= 1, f >= 1, C >= 2")
    return out


def load_dataset(directory: str | Path) -> Dataset:
    d = Path(directory)
    if not d.is_dir():
        raise MissingFileError(f"dataset directory not found: {d}")
    for name in REQUIRED_FILES:
        if not (d / name).is_file():
            raise MissingFileError(f"missing {name} in {d}")
    meta = _read_meta(d / "meta.tsv")
    n, f, C = meta["n"], meta["f"], meta["C"]

    path = d / "edges.tsv"
    edges = []
    for lineno, parts in _rows(path):
        if len(parts) != 2:
            raise ParseError(path, lineno, f"expected 2 fields, got {len(parts)}")
        u, v = _int(path, lineno, parts[0]), _int(path, lineno, parts[1])
        if not (0 <= u < n and 0 <= v < n):
            raise ParseError(path, lineno, f"node id out of range [0, {n})")
        edges.append((u, v))

    path = d / "features.tsv"
    X = np.full((n, f), np.nan)
    seen = np.zeros(n, dtype=bool)
    for lineno, parts in _rows(path):
        if len(parts) != f + 1:
            raise ParseError(path, lineno, f"expected node id plus {f} features, got {len(parts) - 1}")
        i = _int(path, lineno, parts[0])
        if not 0 <= i < n:
            raise ParseError(path, lineno, f"node id {i} out of range [0, {n})")
        X[i] = [_float(path, lineno, s) for s in parts[1:]]
        seen[i] = True
    if not seen.all():
        raise InconsistentDataError(f"{path}: {int((~seen).sum())} node(s) have no feature row")

    path = d / "labels.tsv"
    labels = np.full(n, -1, dtype=np.int64)
    for lineno, parts in _rows(path):
        if len(parts) != 2:
            raise ParseError(path, lineno, f"expected 2 fields, got {len(parts)}")
        i, c = _int(path, lineno, parts[0]), _int(path, lineno, parts[1])
        if not 0 <= i < n:
            raise ParseError(path, lineno, f"node id {i} out of range [0, {n})")
        if not 0 <= c < C:
            raise ParseError(path, lineno, f"class id {c} out of range [0, {C})")
        labels[i] = c
    if (labels < 0).any():
        raise InconsistentDataError(f"{path}: {int((labels < 0).sum())} node(s) have no label")

    try:
        graph = build_graph(edges, n)
    except GraphInputError as exc:
        raise InconsistentDataError(str(exc)) from None
    return Dataset(name=meta["name"], graph=graph, X=X, labels=labels, n_classes=C)


def save_dataset(ds: Dataset, directory: str | Path) -> Path:
    """Write ``ds`` in the TSV layout; floats use ``repr`` so reloading is exact."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    with open(d / "meta.tsv", "w", encoding="utf-8") as fh:
        fh.write(f"name\t{ds.name}\nn\t{ds.n}\nf\t{ds.n_features}\nC\t{ds.n_classes}\n")
    with open(d / "edges.tsv", "w", encoding="utf-8") as fh:
        for u, v in ds.graph.edge_array():
            fh.write(f"{u}\t{v}\n")
    with open(d / "features.tsv", "w", encoding="utf-8") as fh:
        for i, row in enumerate(ds.X):
            fh.write(str(i) + "\t" + "\t".join(repr(float(x)) for x in row) + "\n")
    with open(d / "labels.tsv", "w", encoding="utf-8") as fh:
        for i, c in enumerate(ds.labels):
            fh.write(f"{i}\t{c}\n")
    return d


# -- synthetic graphs ----------------------------------------------------------


@dataclass(frozen=True)
class SynthSpec:
    """Recipe for a seeded synthetic dataset.

    ``bipartite``: two sides of ``sizes`` nodes labeled by side; each cross-side
    pair is connected with probability ``p_out`` and there are no same-side edges.
    ``planted_partition``: one block per entry of ``sizes``; same-block pairs are
    connected with ``p_in``, cross-block pairs with ``p_out``. ``hubs`` extra
    nodes are then attached to ``hub_degree`` nodes drawn from other classes.
    """

    kind: str = "planted_partition"
    sizes: tuple[int, ...] = (50, 50)
    p_in: float = 0.1
    p_out: float = 0.01
    n_features: int = 8
    mean_scale: float = 1.0
    sigma: float = 1.0
    hubs: int = 0
    hub_degree: int = 10
    no_isolated: bool = False
    seed: int = 0
    name: str = "synthetic"

    def __post_init__(self) -> None:
        object.__setattr__(self, "sizes", tuple(int(s) for s in self.sizes))
        if self.kind not in ("bipartite", "planted_partition"):
            raise ValueError(f"unknown synthetic kind {self.kind!r}")
        if self.kind == "bipartite" and len(self.sizes) != 2:
            raise ValueError("bipartite graphs take exactly two side sizes")
        if len(self.sizes) < 2 or min(self.sizes) < 1:
            raise ValueError("need at least two blocks of size >= 1")
        if not (0.0 <= self.p_in <= 1.0 and 0.0 <= self.p_out <= 1.0):
            raise ValueError("edge probabilities must lie in [0, 1]")
        if self.n_features < 1 or self.sigma < 0 or self.hubs < 0 or self.hub_degree < 0:
            raise ValueError("invalid feature or hub settings")


def _pair_edges(rng: np.random.Generator, labels: np.ndarray, p_same: float, p_diff: float) -> np.ndarray:
    n = labels.size
    iu, ju = np.triu_indices(n, k=1)
    prob = np.where(labels[iu] == labels[ju], p_same, p_diff)
    keep = rng.random(iu.size) < prob
    return np.stack([iu[keep], ju[keep]], axis=1)


def generate(spec: SynthSpec) -> Dataset:
    rng = np.random.default_rng(spec.seed)
    labels = np.repeat(np.arange(len(spec.sizes)), spec.sizes)
    p_same = 0.0 if spec.kind == "bipartite" else spec.p_in
    edges = [_pair_edges(rng, labels, p_same, spec.p_out)]

    if spec.no_isolated:
        deg = np.bincount(edges[0].ravel(), minlength=labels.size)
        extra = []
        for i in np.flatnonzero(deg == 0):
            pool = labels != labels[i] if spec.kind == "bipartite" else labels == labels[i]
            pool[i] = False
            cand = np.flatnonzero(pool)
            if cand.size:
                extra.append((i, int(rng.choice(cand))))
        if extra:
            edges.append(np.asarray(extra))

    C = len(spec.sizes)
    if spec.hubs:
        base = labels.size
        hub_labels = rng.integers(0, C, size=spec.hubs)
        hub_edges = []
        for h, c in enumerate(hub_labels):
            cand = np.flatnonzero(labels != c)
            picks = rng.choice(cand, size=min(spec.hub_degree, cand.size), replace=False)
            hub_edges.extend((base + h, int(j)) for j in picks)
        labels = np.concatenate([labels, hub_labels])
        if hub_edges:
            edges.append(np.asarray(hub_edges))

    n = labels.size
    means = rng.normal(0.0, spec.mean_scale, size=(C, spec.n_features))
    X = means[labels] + spec.sigma * rng.normal(size=(n, spec.n_features))
    graph = build_graph(np.concatenate(edges, axis=0) if edges else np.zeros((0, 2)), n)
    return Dataset(name=spec.name, graph=graph, X=X, labels=labels.astype(np.int64), n_classes=C)


# -- export --------------------------------------------------------------------


def fmt(x) -> str:
    """Six significant digits; blanks for missing values."""
    if x is None:
        return ""
    if isinstance(x, str):
        return x
    if isinstance(x, (bool, np.bool_)):
        return "1" if x else "0"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    x = float(x)
    if math.isnan(x):
        return ""
    return format(x, ".6g")


def _round6(obj):
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        return None if not math.isfinite(x) else float(format(x, ".6g"))
    if isinstance(obj, Mapping):
        return {str(k): _round6(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple, np.ndarray)):
        return [_round6(v) for v in obj]
    return obj


def write_csv(path: str | Path, header: Sequence[str], rows: Iterable[Sequence]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([fmt(x) for x in row])
    return path


def export_metric_dump(path, nh_raw: np.ndarray, nh_norm: np.ndarray, node_hom: np.ndarray) -> Path:
    rows = zip(range(len(nh_raw)), nh_raw, nh_norm, node_hom)
    return write_csv(path, ("node_id", "nh_raw", "nh_norm", "node_hom"), rows)


def export_bin_table(path, table: BinTable | None) -> Path:
    """Nonempty bins only, so an empty table is a header-only file."""
    rows = []
    if table is not None:
        for b in np.flatnonzero(table.count > 0):
            rows.append((table.edges[b], table.edges[b + 1], table.count[b], table.accuracy[b]))
    return write_csv(path, ("bin_lo", "bin_hi", "count", "accuracy"), rows)


EPOCH_COLUMNS = ("epoch", "loss", "acc_train", "acc_val", "acc_test", "nh_updated", "mask_acc")


def export_epoch_log(path, epochs) -> Path:
    rows = ((e.epoch, e.loss, e.acc_train, e.acc_val, e.acc_test, e.nh_updated, e.mask_acc) for e in epochs)
    return write_csv(path, EPOCH_COLUMNS, rows)


def export_alpha_trace(path, epochs) -> Path:
    rows = []
    for e in epochs:
        if e.alpha is None:
            continue
        a = list(e.alpha)
        if len(a) == 2:  # gcn_plus_x: (graph channel, raw features)
            a = [None, a[0], a[1]]
        rows.append((e.epoch, *a))
    return write_csv(path, ("epoch", "alpha_low", "alpha_high", "alpha_x"), rows)


def export_summary(path, doc: Mapping) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(_round6(doc), fh, indent=2, sort_keys=True)
        fh.write("\n")
    return path
