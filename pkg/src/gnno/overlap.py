"""Jaccard neighborhood overlap between items on a transition graph."""

from __future__ import annotations

import enum
from typing import Iterable

import numpy as np
import scipy.sparse as sp

from gnno.witg import TransitionGraph, _format_weight

LOW_HI = 0.15
MEDIUM_HI = 0.3


class OverlapGroup(str, enum.Enum):
    ZERO = "zero"
    LOW = "low"
    MEDIUM = "medium"
    HIGH = "high"

    @property
    def interval(self) -> tuple[float, float]:
        """(lo, hi] bounds of the group; ZERO is the single point 0."""
        return {
            OverlapGroup.ZERO: (0.0, 0.0),
            OverlapGroup.LOW: (0.0, LOW_HI),
            OverlapGroup.MEDIUM: (LOW_HI, MEDIUM_HI),
            OverlapGroup.HIGH: (MEDIUM_HI, 1.0),
        }[self]

    def contains(self, value: float) -> bool:
        return group_of(value) is self


def group_of(j_value: float) -> OverlapGroup:
    if not 0.0 <= j_value <= 1.0:
        raise ValueError(f"jaccard value {j_value} outside [0, 1]")
    if j_value == 0.0:
        return OverlapGroup.ZERO
    if j_value <= LOW_HI:
        return OverlapGroup.LOW
    if j_value <= MEDIUM_HI:
        return OverlapGroup.MEDIUM
    return OverlapGroup.HIGH


def jaccard(graph: TransitionGraph, i: int, j: int) -> float:
    """|N(i) & N(j)| / |N(i) | N(j)| on unweighted neighbor sets; 0 if both empty."""
    a = set(graph.neighbors(i).tolist())
    b = set(graph.neighbors(j).tolist())
    union = len(a | b)
    if union == 0:
        return 0.0
    return len(a & b) / union


class OverlapIndex:
    """Sparse symmetric table of nonzero Jaccard scores, diagonal excluded.

    Stored in CSR form: row ``i`` lists the items sharing at least one
    neighbor with ``i`` (sorted) and their scores.
    """

    def __init__(self, num_items: int, indptr, indices, values):
        self.num_items = int(num_items)
        self.indptr = np.asarray(indptr, dtype=np.int64)
        self.indices = np.asarray(indices, dtype=np.int64)
        self.values = np.asarray(values, dtype=np.float64)
        self._keys = None

    def row(self, i: int) -> tuple[np.ndarray, np.ndarray]:
        if not 0 <= i < self.num_items:
            raise IndexError(f"item index {i} out of range [0, {self.num_items})")
        lo, hi = self.indptr[i], self.indptr[i + 1]
        return self.indices[lo:hi], self.values[lo:hi]

    def row_lengths(self) -> np.ndarray:
        return np.diff(self.indptr)

    @property
    def nnz(self) -> int:
        return len(self.indices)

    @property
    def keys(self) -> np.ndarray:
        """Flattened ``i * num_items + j`` keys, globally sorted."""
        if self._keys is None:
            rows = np.repeat(np.arange(self.num_items, dtype=np.int64), self.row_lengths())
            self._keys = rows * self.num_items + self.indices
        return self._keys

    def lookup(self, i, j) -> np.ndarray:
        """Vectorised J(i, j) for stored pairs, 0 elsewhere (including i == j)."""
        i = np.asarray(i, dtype=np.int64)
        j = np.asarray(j, dtype=np.int64)
        q = i * self.num_items + j
        pos = np.searchsorted(self.keys, q)
        pos_c = np.minimum(pos, max(self.nnz - 1, 0))
        if self.nnz == 0:
            return np.zeros(q.shape)
        hit = self.keys[pos_c] == q
        return np.where(hit, self.values[pos_c], 0.0)

    def pairs(self) -> Iterable[tuple[int, int, float]]:
        """Yield each stored pair once as ``(i, j, J)`` with ``i < j``."""
        for i in range(self.num_items):
            cols, vals = self.row(i)
            for j, v in zip(cols.tolist(), vals.tolist()):
                if j > i:
                    yield i, j, v

    def upper_triangle(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        rows = np.repeat(np.arange(self.num_items, dtype=np.int64), self.row_lengths())
        keep = self.indices > rows
        return rows[keep], self.indices[keep], self.values[keep]

    def serialize(self, sink) -> None:
        for i, j, v in self.pairs():
            sink.write(f"{i}\t{j}\t{_format_weight(v)}\n")

    @classmethod
    def deserialize(cls, source: Iterable[str], num_items: int) -> "OverlapIndex":
        src, dst, vals = [], [], []
        for line_no, line in enumerate(source, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split("\t")
            try:
                i, j, v = int(parts[0]), int(parts[1]), float(parts[2])
                if len(parts) != 3 or not 0 <= i < j < num_items or not 0 < v <= 1:
                    raise ValueError
            except (ValueError, IndexError):
                raise ValueError(f"line {line_no}: malformed overlap entry {line!r}") from None
            src.append(i)
            dst.append(j)
            vals.append(v)
        mat = sp.coo_matrix((vals + vals, (src + dst, dst + src)), shape=(num_items, num_items)).tocsr()
        mat.sort_indices()
        return cls(num_items, mat.indptr, mat.indices, mat.data)

    def __eq__(self, other):
        return (
            isinstance(other, OverlapIndex)
            and self.num_items == other.num_items
            and np.array_equal(self.indptr, other.indptr)
            and np.array_equal(self.indices, other.indices)
            and np.array_equal(self.values, other.values)
        )

    def __repr__(self):
        return f"OverlapIndex(num_items={self.num_items}, pairs={self.nnz // 2})"


def build_overlap_index(graph: TransitionGraph, min_edge_weight: float = 0.0) -> OverlapIndex:
    """Jaccard scores for every item pair sharing at least one neighbor.

    Common-neighbor counts come from the sparse product ``A @ A`` of the
    binary adjacency, which enumerates co-neighbor pairs through each pivot
    node (cost ~ sum of squared degrees). Edges lighter than
    ``min_edge_weight`` are dropped before neighbor sets are formed.
    """
    graph = graph.prune(min_edge_weight)
    n = graph.num_nodes
    adj = sp.csr_matrix(
        (np.ones(len(graph.indices), dtype=np.int64), graph.indices, graph.indptr), shape=(n, n)
    )
    common = (adj @ adj).tocoo()
    rows, cols, inter = common.row.astype(np.int64), common.col.astype(np.int64), common.data
    keep = (rows != cols) & (inter > 0)
    rows, cols, inter = rows[keep], cols[keep], inter[keep]
    deg = graph.degree()
    union = deg[rows] + deg[cols] - inter
    values = inter / union
    order = np.lexsort((cols, rows))
    rows, cols, values = rows[order], cols[order], values[order]
    indptr = np.zeros(n + 1, dtype=np.int64)
    np.cumsum(np.bincount(rows, minlength=n), out=indptr[1:])
    return OverlapIndex(n, indptr, cols, values)


def pivot_cost(graph: TransitionGraph) -> int:
    """Number of co-neighbor pairs enumerated by the index build."""
    deg = graph.degree().astype(np.int64)
    return int(np.sum(deg * deg))
