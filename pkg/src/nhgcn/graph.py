"""Sparse undirected graphs, symmetric normalization and k-hop neighborhoods."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Iterable, Literal

import numpy as np
import scipy.sparse as sp

log = logging.getLogger(__name__)

Side = Literal["target", "source"]


class GraphInputError(ValueError):
    """Raised when an edge list references nodes outside ``[0, n)``."""


@dataclass(frozen=True)
class Graph:
    """Immutable undirected graph in compressed-row form.

    ``indices[indptr[i]:indptr[i + 1]]`` are the sorted neighbors of node ``i``.
    Self-loops and duplicate edges are never stored.
    """

    n: int
    indptr: np.ndarray
    indices: np.ndarray
    degree: np.ndarray
    dropped_self_loops: int = 0

    @property
    def num_edges(self) -> int:
        return int(self.indices.size // 2)

    def neighbors(self, i: int) -> np.ndarray:
        return self.indices[self.indptr[i]:self.indptr[i + 1]]

    def adjacency(self) -> sp.csr_matrix:
        data = np.ones(self.indices.size, dtype=np.float64)
        return sp.csr_matrix((data, self.indices, self.indptr), shape=(self.n, self.n))

    def edge_array(self) -> np.ndarray:
        """Each undirected edge once, as an ``(m, 2)`` array with ``u < v``."""
        rows = np.repeat(np.arange(self.n), np.diff(self.indptr))
        keep = rows < self.indices
        return np.stack([rows[keep], self.indices[keep]], axis=1)


def build_graph(edges: Iterable[tuple[int, int]] | np.ndarray, n: int) -> Graph:
    """Symmetrize and deduplicate an edge list into a :class:`Graph`.

    Self-loops in the input are dropped (and counted); out-of-range ids raise
    :class:`GraphInputError`.
    """
    if n < 0:
        raise GraphInputError(f"node count must be non-negative, got {n}")
    arr = np.asarray(list(edges) if not isinstance(edges, np.ndarray) else edges, dtype=np.int64)
    arr = arr.reshape(-1, 2)
    if arr.size and (arr.min() < 0 or arr.max() >= n):
        bad = arr[(arr < 0).any(axis=1) | (arr >= n).any(axis=1)][0]
        raise GraphInputError(f"edge ({bad[0]}, {bad[1]}) out of range for n={n}")

    loops = arr[:, 0] == arr[:, 1]
    n_loops = int(loops.sum())
    if n_loops:
        log.warning("dropped %d self-loop(s) from input edge list", n_loops)
    arr = arr[~loops]

    both = np.concatenate([arr, arr[:, ::-1]], axis=0)
    if both.size:
        both = np.unique(both, axis=0)
    rows, cols = both[:, 0], both[:, 1]
    counts = np.bincount(rows, minlength=n) if rows.size else np.zeros(n, dtype=np.int64)
    indptr = np.zeros(n + 1, dtype=np.int64)
    np.cumsum(counts, out=indptr[1:])
    # np.unique sorts lexicographically, so cols are already sorted per row
    return Graph(
        n=n,
        indptr=indptr,
        indices=cols.astype(np.int64),
        degree=counts.astype(np.int64),
        dropped_self_loops=n_loops,
    )


@dataclass(frozen=True)
class NormAdj:
    """Symmetrically normalized adjacency (optionally with self-loops)."""

    matrix: sp.csr_matrix
    self_loop: bool

    @property
    def n(self) -> int:
        return self.matrix.shape[0]


def _inv_sqrt(x: np.ndarray) -> np.ndarray:
    out = np.zeros_like(x, dtype=np.float64)
    pos = x > 0
    out[pos] = 1.0 / np.sqrt(x[pos])
    return out


def _sym_normalize(m: sp.spmatrix) -> sp.csr_matrix:
    """``D_r^{-1/2} M D_c^{-1/2}`` with row and column sums; zero sums give zero factors."""
    m = sp.csr_matrix(m)
    r = _inv_sqrt(np.asarray(m.sum(axis=1)).ravel())
    c = _inv_sqrt(np.asarray(m.sum(axis=0)).ravel())
    out = sp.diags(r) @ m @ sp.diags(c)
    out = sp.csr_matrix(out)
    out.eliminate_zeros()
    out.sort_indices()
    return out


def normalize_adjacency(g: Graph, self_loop: bool) -> NormAdj:
    """``D^-1/2 A D^-1/2``, or ``(D+I)^-1/2 (A+I) (D+I)^-1/2`` when ``self_loop``."""
    a = g.adjacency()
    if self_loop:
        a = a + sp.identity(g.n, format="csr")
    return NormAdj(matrix=_sym_normalize(a), self_loop=self_loop)


@dataclass(frozen=True)
class KHopIndex:
    """Per-node neighbors within ``k`` hops (target excluded), in CSR layout.

    Lookup of ``N(i, k)`` is O(1) by node id; rows are sorted.
    """

    k: int
    indptr: np.ndarray
    indices: np.ndarray

    @property
    def n(self) -> int:
        return self.indptr.size - 1

    def __getitem__(self, i: int) -> np.ndarray:
        return self.indices[self.indptr[i]:self.indptr[i + 1]]

    def __len__(self) -> int:
        return self.n

    def sizes(self) -> np.ndarray:
        return np.diff(self.indptr)

    def matrix(self) -> sp.csr_matrix:
        data = np.ones(self.indices.size, dtype=np.float64)
        return sp.csr_matrix((data, self.indices, self.indptr), shape=(self.n, self.n))


def khop_index(g: Graph, k: int) -> KHopIndex:
    """All nodes at shortest-path distance ``1..k`` from each node.

    Runs a level-synchronous breadth-first expansion for every source at once:
    each level multiplies the frontier by the adjacency and removes nodes
    already reached.
    """
    if k < 1:
        raise ValueError(f"hop count must be >= 1, got {k}")
    a = g.adjacency()
    reached = sp.identity(g.n, format="csr")
    frontier = reached
    for _ in range(k):
        nxt = frontier @ a
        nxt.data[:] = 1.0
        nxt = sp.csr_matrix(nxt - nxt.multiply(reached))
        nxt.eliminate_zeros()
        if nxt.nnz == 0:
            break
        reached = sp.csr_matrix(reached + nxt)
        frontier = nxt
    hood = sp.csr_matrix(reached - sp.identity(g.n, format="csr"))
    hood.eliminate_zeros()
    hood.sort_indices()
    return KHopIndex(k=k, indptr=hood.indptr.astype(np.int64), indices=hood.indices.astype(np.int64))


def apply_mask(na: NormAdj | sp.spmatrix, mask: np.ndarray, side: Side) -> sp.csr_matrix:
    """Zero the rows (``side="target"``) or columns (``side="source"``) where ``mask`` is 0."""
    m = na.matrix if isinstance(na, NormAdj) else sp.csr_matrix(na)
    mask = np.asarray(mask)
    if mask.shape != (m.shape[0],):
        raise ValueError(f"mask length {mask.shape} does not match operator size {m.shape[0]}")
    d = sp.diags(mask.astype(np.float64))
    if side == "target":
        out = d @ m
    elif side == "source":
        out = m @ d
    else:
        raise ValueError(f"side must be 'target' or 'source', got {side!r}")
    out = sp.csr_matrix(out)
    out.eliminate_zeros()
    return out


def masked_normalized(g: Graph, mask: np.ndarray, side: Side, self_loop: bool) -> sp.csr_matrix:
    """Literal ``norm(M A)`` / ``norm(A M)``: mask first, then normalize by the
    masked matrix's own row and column sums."""
    a = g.adjacency()
    if self_loop:
        a = a + sp.identity(g.n, format="csr")
    d = sp.diags(np.asarray(mask, dtype=np.float64))
    masked = d @ a if side == "target" else a @ d
    return _sym_normalize(masked)
