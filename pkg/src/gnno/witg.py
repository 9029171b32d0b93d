"""Weighted item transition graph.

Every within-window co-occurrence of items ``s[m]`` and ``s[m+k]`` in a
training sequence adds ``1/k`` to the weight of the undirected edge
between them. Hop distance is bounded by ``WitgConfig.window`` (default 3).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np


class GraphFormatError(ValueError):
    pass


@dataclass(frozen=True)
class WitgConfig:
    window: int = 3
    allow_self_loops: bool = False

    def __post_init__(self):
        if self.window < 1:
            raise ValueError("window must be >= 1")


class TransitionGraph:
    """Undirected weighted graph stored as symmetric CSR adjacency.

    ``indptr``/``indices``/``weights`` follow the scipy CSR layout; each row
    is sorted by neighbor index. A self-loop, if present, appears once in
    its row.
    """

    def __init__(self, num_nodes: int, indptr, indices, weights):
        self.num_nodes = int(num_nodes)
        self.indptr = np.asarray(indptr, dtype=np.int64)
        self.indices = np.asarray(indices, dtype=np.int64)
        self.weights = np.asarray(weights, dtype=np.float64)

    @classmethod
    def from_edges(cls, num_nodes: int, src, dst, weight) -> "TransitionGraph":
        """Build from undirected edges given once each (any orientation)."""
        src = np.asarray(src, dtype=np.int64)
        dst = np.asarray(dst, dtype=np.int64)
        weight = np.asarray(weight, dtype=np.float64)
        loop = src == dst
        rows = np.concatenate([src, dst[~loop]])
        cols = np.concatenate([dst, src[~loop]])
        vals = np.concatenate([weight, weight[~loop]])
        order = np.lexsort((cols, rows))
        rows, cols, vals = rows[order], cols[order], vals[order]
        indptr = np.zeros(num_nodes + 1, dtype=np.int64)
        np.cumsum(np.bincount(rows, minlength=num_nodes), out=indptr[1:])
        return cls(num_nodes, indptr, cols, vals)

    @property
    def num_edges(self) -> int:
        loops = int(np.count_nonzero(self.indices == np.repeat(np.arange(self.num_nodes), np.diff(self.indptr))))
        return (len(self.indices) - loops) // 2 + loops

    def degree(self) -> np.ndarray:
        return np.diff(self.indptr)

    def neighbors(self, i: int) -> np.ndarray:
        self._check(i)
        return self.indices[self.indptr[i] : self.indptr[i + 1]]

    def neighbor_weights(self, i: int) -> np.ndarray:
        self._check(i)
        return self.weights[self.indptr[i] : self.indptr[i + 1]]

    def weight(self, i: int, j: int) -> float:
        nbrs = self.neighbors(i)
        pos = np.searchsorted(nbrs, j)
        if pos < len(nbrs) and nbrs[pos] == j:
            return float(self.weights[self.indptr[i] + pos])
        return 0.0

    def edges(self):
        """Yield ``(i, j, w)`` with ``i <= j`` in lexicographic order."""
        for i in range(self.num_nodes):
            lo, hi = self.indptr[i], self.indptr[i + 1]
            for j, w in zip(self.indices[lo:hi], self.weights[lo:hi]):
                if j >= i:
                    yield i, int(j), float(w)

    def total_weight(self) -> float:
        return sum(w for _, _, w in self.edges())

    def prune(self, min_weight: float) -> "TransitionGraph":
        """Copy keeping only edges with weight >= ``min_weight``."""
        if min_weight <= 0:
            return self
        keep = self.weights >= min_weight
        rows = np.repeat(np.arange(self.num_nodes), np.diff(self.indptr))[keep]
        indptr = np.zeros(self.num_nodes + 1, dtype=np.int64)
        np.cumsum(np.bincount(rows, minlength=self.num_nodes), out=indptr[1:])
        return TransitionGraph(self.num_nodes, indptr, self.indices[keep], self.weights[keep])

    def _check(self, i):
        if not 0 <= i < self.num_nodes:
            raise IndexError(f"item index {i} out of range [0, {self.num_nodes})")

    def __eq__(self, other):
        return (
            isinstance(other, TransitionGraph)
            and self.num_nodes == other.num_nodes
            and np.array_equal(self.indptr, other.indptr)
            and np.array_equal(self.indices, other.indices)
            and np.array_equal(self.weights, other.weights)
        )

    def allclose(self, other: "TransitionGraph", atol: float = 1e-9) -> bool:
        return (
            self.num_nodes == other.num_nodes
            and np.array_equal(self.indptr, other.indptr)
            and np.array_equal(self.indices, other.indices)
            and np.allclose(self.weights, other.weights, rtol=0.0, atol=atol)
        )

    def __repr__(self):
        return f"TransitionGraph(num_nodes={self.num_nodes}, num_edges={self.num_edges})"


def node_neighbors(graph: TransitionGraph, i: int) -> set[int]:
    return set(graph.neighbors(i).tolist())


def build_witg(
    train_sequences: Sequence[Sequence[int]],
    config: WitgConfig = WitgConfig(),
    num_nodes: int | None = None,
) -> TransitionGraph:
    """Accumulate ``1/k`` edge weights for all hops ``k <= config.window``.

    ``num_nodes`` defaults to ``max item index + 1``. Out-of-range indices
    raise ``ValueError`` naming the offending sequence.
    """
    seqs = [np.asarray(s, dtype=np.int64) for s in train_sequences]
    if num_nodes is None:
        num_nodes = max((int(s.max()) + 1 for s in seqs if len(s)), default=0)
    for sid, s in enumerate(seqs):
        if len(s) and (s.min() < 0 or s.max() >= num_nodes):
            raise ValueError(f"sequence {sid} has an item index outside [0, {num_nodes})")

    src, dst, wts = [], [], []
    for k in range(1, config.window + 1):
        inv = 1.0 / k
        for s in seqs:
            if len(s) <= k:
                continue
            src.append(s[:-k])
            dst.append(s[k:])
            wts.append(np.full(len(s) - k, inv))
    if not src:
        return TransitionGraph.from_edges(num_nodes, [], [], [])
    a = np.concatenate(src)
    b = np.concatenate(dst)
    w = np.concatenate(wts)
    if not config.allow_self_loops:
        keep = a != b
        a, b, w = a[keep], b[keep], w[keep]
    lo, hi = np.minimum(a, b), np.maximum(a, b)
    keys, inverse = np.unique(lo * num_nodes + hi, return_inverse=True)
    summed = np.bincount(inverse, weights=w, minlength=len(keys))
    return TransitionGraph.from_edges(num_nodes, keys // num_nodes, keys % num_nodes, summed)


def _format_weight(w: float) -> str:
    # fixed-point with at least 12 significant digits; shortest exact repr
    # when that does not round-trip
    decimals = max(12, 11 - math.floor(math.log10(abs(w)))) if w else 12
    text = f"{w:.{decimals}f}"
    return text if float(text) == w else repr(float(w))


def serialize_graph(graph: TransitionGraph, sink) -> None:
    """Write one ``i<TAB>j<TAB>weight`` line per undirected edge, ``i <= j``."""
    for i, j, w in graph.edges():
        sink.write(f"{i}\t{j}\t{_format_weight(w)}\n")


def deserialize_graph(source: Iterable[str], num_nodes: int | None = None) -> TransitionGraph:
    src, dst, wts = [], [], []
    for line_no, line in enumerate(source, start=1):
        line = line.rstrip("\n")
        if not line:
            continue
        parts = line.split("\t")
        try:
            if len(parts) != 3:
                raise ValueError
            i, j, w = int(parts[0]), int(parts[1]), float(parts[2])
            if i < 0 or j < i or not w > 0:
                raise ValueError
        except ValueError:
            raise GraphFormatError(f"line {line_no}: malformed edge {line!r}") from None
        src.append(i)
        dst.append(j)
        wts.append(w)
    if len(set(zip(src, dst))) != len(src):
        raise GraphFormatError("duplicate edge in edge list")
    n = max(dst, default=-1) + 1
    if num_nodes is None:
        num_nodes = n
    elif n > num_nodes:
        raise GraphFormatError(f"edge endpoint {n - 1} exceeds num_nodes={num_nodes}")
    return TransitionGraph.from_edges(num_nodes, src, dst, wts)
