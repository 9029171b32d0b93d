"""Embedding-similarity distributions per overlap group across training.

Item pairs are partitioned by Jaccard overlap (zero / low / medium / high)
and the cosine similarity of their embeddings is histogrammed at chosen
epochs. The pair sample for each group is drawn once and reused for every
snapshot so distribution shifts reflect training, not resampling.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.stats import wasserstein_distance

from gnno.overlap import LOW_HI, MEDIUM_HI, OverlapGroup, OverlapIndex
from gnno.trainer import ModelParams

# enumerate zero-overlap pairs exhaustively below this many item pairs
_ENUMERATE_LIMIT = 5_000_000


@dataclass(frozen=True)
class AnalysisConfig:
    max_pairs: int = 100_000
    bins: int = 50
    value_range: tuple[float, float] = (-1.0, 1.0)
    seed: int = 0
    snapshot_epochs: tuple[int, ...] | None = None

    def epochs_for(self, total_epochs: int) -> list[int]:
        if self.snapshot_epochs is not None:
            return sorted(set(self.snapshot_epochs))
        return sorted({0, total_epochs // 2, total_epochs})


@dataclass
class GroupHistogram:
    group: OverlapGroup
    epoch: int
    bin_edges: list[float]
    counts: list[int]
    pair_count: int
    mean: float
    std: float
    values: np.ndarray = field(default=None, repr=False, compare=False)

    def rows(self):
        for lo, hi, c in zip(self.bin_edges[:-1], self.bin_edges[1:], self.counts):
            yield self.epoch, self.group.value, lo, hi, c


def _group_mask(values: np.ndarray, group: OverlapGroup) -> np.ndarray:
    if group is OverlapGroup.LOW:
        return values <= LOW_HI
    if group is OverlapGroup.MEDIUM:
        return (values > LOW_HI) & (values <= MEDIUM_HI)
    if group is OverlapGroup.HIGH:
        return values > MEDIUM_HI
    raise ValueError("zero group is implicit")


def available_pairs(index: OverlapIndex, group: OverlapGroup) -> int:
    rows, _, vals = index.upper_triangle()
    if group is OverlapGroup.ZERO:
        n = index.num_items
        return n * (n - 1) // 2 - len(rows)
    return int(np.count_nonzero(_group_mask(vals, group)))


def sample_group_pairs(
    index: OverlapIndex, group: OverlapGroup, max_pairs: int, rng: np.random.Generator
) -> np.ndarray:
    """Up to ``max_pairs`` distinct unordered pairs ``(i, j)``, ``i < j``, in ``group``."""
    rows, cols, vals = index.upper_triangle()
    n = index.num_items
    if group is not OverlapGroup.ZERO:
        mask = _group_mask(vals, group)
        pairs = np.stack([rows[mask], cols[mask]], axis=1)
        if len(pairs) > max_pairs:
            pick = np.sort(rng.choice(len(pairs), size=max_pairs, replace=False))
            pairs = pairs[pick]
        return pairs

    stored = rows * n + cols
    total = n * (n - 1) // 2
    want = min(max_pairs, total - len(stored))
    if want <= 0:
        return np.empty((0, 2), dtype=np.int64)
    if total <= _ENUMERATE_LIMIT:
        ii, jj = np.triu_indices(n, k=1)
        keys = ii.astype(np.int64) * n + jj
        keys = keys[~np.isin(keys, stored, assume_unique=True)]
        if len(keys) > want:
            keys = np.sort(rng.choice(keys, size=want, replace=False))
    else:
        found = np.empty(0, dtype=np.int64)
        while len(found) < want:
            a = rng.integers(0, n, size=2 * (want - len(found)) + 16)
            b = rng.integers(0, n, size=len(a))
            ok = a != b
            keys = np.minimum(a, b)[ok] * n + np.maximum(a, b)[ok]
            keys = keys[~np.isin(keys, stored)]
            found = np.union1d(found, keys)
        keys = np.sort(rng.choice(found, size=want, replace=False))
    return np.stack([keys // n, keys % n], axis=1)


def cosine_similarities(emb: np.ndarray, pairs: np.ndarray) -> np.ndarray:
    if len(pairs) == 0:
        return np.empty(0)
    a = emb[pairs[:, 0]]
    b = emb[pairs[:, 1]]
    norms = np.linalg.norm(a, axis=1) * np.linalg.norm(b, axis=1)
    dots = np.einsum("pd,pd->p", a, b)
    sims = np.divide(dots, norms, out=np.zeros_like(dots), where=norms > 0)
    return np.clip(sims, -1.0, 1.0)


def pair_similarity(params: ModelParams, i: int, j: int) -> float:
    return float(cosine_similarities(params.item_embeddings, np.array([[i, j]]))[0])


def histogram(values: np.ndarray, group: OverlapGroup, epoch: int, config: AnalysisConfig) -> GroupHistogram:
    counts, edges = np.histogram(values, bins=config.bins, range=config.value_range)
    return GroupHistogram(
        group=group,
        epoch=epoch,
        bin_edges=edges.tolist(),
        counts=counts.astype(int).tolist(),
        pair_count=len(values),
        mean=float(np.mean(values)) if len(values) else float("nan"),
        std=float(np.std(values)) if len(values) else float("nan"),
        values=values,
    )


def snapshot_distributions(
    params: ModelParams,
    index: OverlapIndex,
    epoch: int,
    config: AnalysisConfig = AnalysisConfig(),
    pairs: dict[OverlapGroup, np.ndarray] | None = None,
) -> list[GroupHistogram]:
    """One histogram per overlap group. ``pairs`` reuses a fixed pair sample."""
    if pairs is None:
        pairs = draw_group_pairs(index, config)
    return [
        histogram(cosine_similarities(params.item_embeddings, pairs[g]), g, epoch, config) for g in OverlapGroup
    ]


def draw_group_pairs(index: OverlapIndex, config: AnalysisConfig) -> dict[OverlapGroup, np.ndarray]:
    rng = np.random.default_rng([config.seed, 0xF16])
    return {g: sample_group_pairs(index, g, config.max_pairs, rng) for g in OverlapGroup}


class DistributionTracker:
    """Collects per-group histograms at several epochs of one training run."""

    def __init__(self, index: OverlapIndex, config: AnalysisConfig = AnalysisConfig()):
        self.index = index
        self.config = config
        self.pairs = draw_group_pairs(index, config)
        self.snapshots: dict[int, list[GroupHistogram]] = {}

    def snapshot(self, params: ModelParams, epoch: int) -> list[GroupHistogram]:
        hists = snapshot_distributions(params, self.index, epoch, self.config, self.pairs)
        self.snapshots[epoch] = hists
        return hists

    def wasserstein_shift(self, group: OverlapGroup, epoch: int, reference: int = 0) -> float:
        """Wasserstein-1 distance between a group's similarities at two epochs."""
        a = self._values(reference, group)
        b = self._values(epoch, group)
        if len(a) == 0 or len(b) == 0:
            return float("nan")
        return float(wasserstein_distance(a, b))

    def _values(self, epoch: int, group: OverlapGroup) -> np.ndarray:
        return next(h.values for h in self.snapshots[epoch] if h.group is group)

    def summary(self) -> dict:
        epochs = sorted(self.snapshots)
        ref = epochs[0] if epochs else 0
        out = {"seed": self.config.seed, "reference_epoch": ref, "groups": {}}
        for g in OverlapGroup:
            per_epoch = {}
            for e in epochs:
                h = next(h for h in self.snapshots[e] if h.group is g)
                per_epoch[str(e)] = {
                    "pair_count": h.pair_count,
                    "mean": h.mean,
                    "std": h.std,
                    "wasserstein_to_reference": self.wasserstein_shift(g, e, ref),
                }
            out["groups"][g.value] = per_epoch
        return out

    def write_csv(self, path, epochs: Sequence[int] | None = None) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["epoch", "group", "bin_lo", "bin_hi", "count"])
            for e in epochs if epochs is not None else sorted(self.snapshots):
                for h in self.snapshots[e]:
                    writer.writerows(h.rows())

    def write_summary(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.summary(), fh, sort_keys=True, indent=2)
