"""Negative samplers: neighborhood-overlap (GNNO), uniform and DNS.

The GNNO distribution for a target ``i`` is a softmax of Jaccard scores,

    p(j | i) = exp(J(i, j)) / sum_{k in S(i)} exp(J(i, k)),
    S(i) = items \\ {i} \\ {k : J(i, k) > lambda},

where ``lambda`` grows linearly with the training step and is clipped at
``lambda_max``. Items with no neighborhood overlap carry weight ``exp(0)``.

It is sampled as a two-part mixture so that the dense vector is never
built: part A covers the stored overlap list with ``J <= lambda``
(weights ``exp(J)``), part B the implicit zero-overlap remainder (weight 1
each, drawn by exact rank selection in the complement of the stored list).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from gnno import _stream
from gnno.overlap import OverlapIndex

TAG_MIX = 1
TAG_PICK = 2
TAG_UNIFORM = 3
TAG_DNS = 4

EPOCH = "epoch"
BATCH = "batch"


class EmptySupportError(RuntimeError):
    """Every candidate negative for a target is excluded."""


@dataclass(frozen=True)
class CurriculumSchedule:
    pace_c: float = 0.04
    initial_b: float = 0.0
    lambda_max: float = 0.5
    step_unit: str = EPOCH
    max_step: int = 30

    def __post_init__(self):
        if self.pace_c < 0 or self.initial_b < 0:
            raise ValueError("pace_c and initial_b must be non-negative")
        if not 0 < self.lambda_max <= 1:
            raise ValueError("lambda_max must lie in (0, 1]")
        if self.step_unit not in (EPOCH, BATCH):
            raise ValueError(f"step_unit must be {EPOCH!r} or {BATCH!r}")
        if self.max_step < 1:
            raise ValueError("max_step must be positive")

    def saturation_step(self) -> float:
        """First step at which lambda reaches lambda_max (inf if c == 0)."""
        if self.initial_b >= self.lambda_max:
            return 0
        if self.pace_c == 0:
            return math.inf
        return math.ceil((self.lambda_max - self.initial_b) / self.pace_c)


def lambda_at(schedule: CurriculumSchedule, q: int) -> float:
    """Linear pacing ``c * q + b`` clipped at ``lambda_max``."""
    if q < 0:
        raise ValueError("step must be >= 0")
    return min(schedule.pace_c * q + schedule.initial_b, schedule.lambda_max)


@dataclass(frozen=True)
class SamplerPreset:
    neg_hard: int
    neg_rand: int
    pace_c: float
    lambda_max: float


PRESETS = {
    "beauty": SamplerPreset(neg_hard=9, neg_rand=16, pace_c=0.04, lambda_max=0.5),
    "toys": SamplerPreset(neg_hard=2, neg_rand=10, pace_c=0.05, lambda_max=0.2),
    "phones": SamplerPreset(neg_hard=4, neg_rand=10, pace_c=0.01, lambda_max=0.9),
}


@dataclass
class NegativeBatch:
    targets: np.ndarray
    hard_negatives: np.ndarray  # (len(targets), neg_hard)
    random_negatives: np.ndarray  # (len(targets), neg_rand)

    def all(self) -> np.ndarray:
        return np.concatenate([self.hard_negatives, self.random_negatives], axis=1)


class _LambdaTables:
    """Part-A search structures for one lambda value."""

    def __init__(self, index: OverlapIndex, lam: float, row_ids: np.ndarray):
        n = index.num_items
        eligible = index.values <= lam
        w = np.where(eligible, np.exp(index.values), 0.0)
        lens = index.row_lengths()
        starts = index.indptr[:-1]
        nonempty = lens > 0
        self.weights = w
        self.mass = np.zeros(n)
        self.last_eligible = np.full(n, -1, dtype=np.int64)
        self.keys = np.empty(0)
        if not len(w):
            return
        self.mass[nonempty] = np.add.reduceat(w, starts[nonempty])
        pos = np.where(eligible, np.arange(len(w)), -1)
        self.last_eligible[nonempty] = np.maximum.reduceat(pos, starts[nonempty])
        # per-row CDF in [0, 1], offset by 2*row so one sorted array serves all rows
        csum = np.cumsum(w)
        local = csum - np.repeat(np.concatenate([[0.0], csum])[starts], lens)
        row_end = np.zeros(n)
        row_end[nonempty] = local[index.indptr[1:][nonempty] - 1]
        denom = np.repeat(row_end, lens)
        frac = np.divide(local, denom, out=np.zeros_like(local), where=denom > 0)
        self.keys = 2.0 * row_ids + frac


class SamplerState:
    """Overlap index plus curriculum position and a seeded random stream.

    Draws are pure functions of ``(seed, step, ordinal, draw)``; the same
    state, step and ordinal always reproduce the same negatives.
    """

    def __init__(self, overlap_index: OverlapIndex, seed: int = 0, lambda_value: float = 0.0):
        self.index = overlap_index
        self.item_count = overlap_index.num_items
        self.seed = int(seed)
        self.step = 0
        self.current_lambda = float(lambda_value)
        self.audit: Callable | None = None
        n = self.item_count
        lens = overlap_index.row_lengths()
        self._row_ids = np.repeat(np.arange(n, dtype=np.int64), lens)
        self.zero_count = n - 1 - lens
        # complement rank-select keys: sorted (stored + self) per row, minus position
        rows = np.concatenate([self._row_ids, np.arange(n, dtype=np.int64)])
        cols = np.concatenate([overlap_index.indices, np.arange(n, dtype=np.int64)])
        order = np.lexsort((cols, rows))
        rows, cols = rows[order], cols[order]
        excl_ptr = np.zeros(n + 1, dtype=np.int64)
        np.cumsum(lens + 1, out=excl_ptr[1:])
        adjusted = cols - (np.arange(len(cols)) - np.repeat(excl_ptr[:-1], lens + 1))
        self._excl_ptr = excl_ptr
        self._excl_keys = rows * (n + 1) + adjusted
        self._tables: _LambdaTables | None = None
        self._tables_lambda: float | None = None

    def advance(self, schedule: CurriculumSchedule, q: int) -> float:
        self.step = int(q)
        self.current_lambda = lambda_at(schedule, q)
        return self.current_lambda

    def set_lambda(self, value: float, step: int | None = None) -> None:
        self.current_lambda = float(value)
        if step is not None:
            self.step = int(step)

    def tables(self) -> _LambdaTables:
        if self._tables is None or self._tables_lambda != self.current_lambda:
            self._tables = _LambdaTables(self.index, self.current_lambda, self._row_ids)
            self._tables_lambda = self.current_lambda
        return self._tables

    def _check_targets(self, targets: np.ndarray) -> None:
        if targets.size and (targets.min() < 0 or targets.max() >= self.item_count):
            raise IndexError("target item index out of range")

    # -- vectorised draws ---------------------------------------------------

    def draw_gnno(self, targets, ordinals, n: int, draw_offset: int = 0) -> np.ndarray:
        """``(len(targets), n)`` GNNO negatives."""
        targets = np.asarray(targets, dtype=np.int64)
        ordinals = np.asarray(ordinals, dtype=np.int64)
        self._check_targets(targets)
        if n == 0 or targets.size == 0:
            return np.empty((targets.size, n), dtype=np.int64)
        tab = self.tables()
        mass_a = tab.mass[targets]
        count_b = self.zero_count[targets]
        total = mass_a + count_b
        if np.any(total <= 0):
            bad = int(targets[np.argmax(total <= 0)])
            raise EmptySupportError(
                f"no admissible negatives for item {bad} at lambda={self.current_lambda}"
            )
        draws = np.arange(draw_offset, draw_offset + n, dtype=np.int64)[None, :]
        key = (self.seed, self.step, ordinals[:, None], draws)
        u_mix = _stream.uniform(*key, TAG_MIX)
        u_pick = _stream.uniform(*key, TAG_PICK)
        tgt = np.broadcast_to(targets[:, None], u_mix.shape)
        use_a = u_mix * total[:, None] < mass_a[:, None]

        out = np.empty(u_mix.shape, dtype=np.int64)
        # part A: inverse-CDF search within the target's stored list
        if np.any(use_a):
            t_a = tgt[use_a]
            pos = np.searchsorted(tab.keys, 2.0 * t_a + u_pick[use_a], side="right")
            pos = np.minimum(pos, tab.last_eligible[t_a])
            out[use_a] = self.index.indices[pos]
        # part B: the r-th item outside stored(target) + {target}
        use_b = ~use_a
        if np.any(use_b):
            t_b = tgt[use_b]
            r = np.minimum(
                np.floor(u_pick[use_b] * self.zero_count[t_b]).astype(np.int64),
                self.zero_count[t_b] - 1,
            )
            below = np.searchsorted(self._excl_keys, t_b * (self.item_count + 1) + r, side="right")
            out[use_b] = r + (below - self._excl_ptr[t_b])
        return out

    def draw_uniform(self, targets, ordinals, n: int, draw_offset: int = 0) -> np.ndarray:
        targets = np.asarray(targets, dtype=np.int64)
        ordinals = np.asarray(ordinals, dtype=np.int64)
        self._check_targets(targets)
        if n and self.item_count < 2:
            raise EmptySupportError("uniform sampling needs at least two items")
        draws = np.arange(draw_offset, draw_offset + n, dtype=np.int64)[None, :]
        r = _stream.integers(self.item_count - 1, self.seed, self.step, ordinals[:, None], draws, TAG_UNIFORM)
        r = r.reshape(targets.size, n)
        return r + (r >= targets[:, None])

    def draw_dns(
        self,
        targets,
        ordinals,
        n: int,
        pool_size: int,
        score_fn: Callable[[np.ndarray], np.ndarray],
        draw_offset: int = 0,
    ) -> np.ndarray:
        """Per output, the best-scored of ``pool_size`` uniform candidates.

        ``score_fn`` maps a ``(len(targets), n, pool_size)`` candidate array
        to scores of the same shape. Ties go to the smallest item index.
        """
        if pool_size < 1:
            raise ValueError("pool_size must be >= 1")
        targets = np.asarray(targets, dtype=np.int64)
        ordinals = np.asarray(ordinals, dtype=np.int64)
        self._check_targets(targets)
        draws = np.arange(draw_offset, draw_offset + n, dtype=np.int64)[None, :, None]
        slots = np.arange(pool_size, dtype=np.int64)[None, None, :]
        r = _stream.integers(
            self.item_count - 1, self.seed, self.step, ordinals[:, None, None], draws * pool_size + slots, TAG_DNS
        )
        r = r.reshape(targets.size, n, pool_size)
        pool = r + (r >= targets[:, None, None])
        scores = np.asarray(score_fn(pool), dtype=np.float64)
        best = scores.max(axis=2, keepdims=True)
        return np.where(scores == best, pool, self.item_count).min(axis=2)

    def distribution(self, target: int) -> np.ndarray:
        """Dense probability vector implied by the two mixture parts."""
        self._check_targets(np.asarray([target]))
        tab = self.tables()
        lo, hi = self.index.indptr[target], self.index.indptr[target + 1]
        total = tab.mass[target] + self.zero_count[target]
        if total <= 0:
            raise EmptySupportError(f"no admissible negatives for item {target}")
        p = np.full(self.item_count, 1.0 / total)
        p[target] = 0.0
        p[self.index.indices[lo:hi]] = tab.weights[lo:hi] / total
        return p


def gnno_distribution(state: SamplerState, target: int) -> np.ndarray:
    return state.distribution(target)


def sample_gnno(state: SamplerState, target: int, n: int, ordinal: int = 0) -> list[int]:
    return state.draw_gnno([target], [ordinal], n)[0].tolist()


def sample_uniform(state: SamplerState, target: int, n: int, ordinal: int = 0) -> list[int]:
    return state.draw_uniform([target], [ordinal], n)[0].tolist()


def sample_dns(
    state: SamplerState,
    target: int,
    n: int,
    pool_size: int,
    scorer: Callable[[int], float],
    ordinal: int = 0,
) -> list[int]:
    score_fn = np.vectorize(lambda item: float(scorer(int(item))), otypes=[np.float64])
    return state.draw_dns([target], [ordinal], n, pool_size, score_fn)[0].tolist()


def sample_batch(
    state: SamplerState,
    targets: Sequence[int],
    counts: tuple[int, int],
    ordinals: Sequence[int] | None = None,
) -> NegativeBatch:
    """``counts = (neg_hard, neg_rand)`` GNNO and uniform negatives per target.

    ``ordinals`` identify each target's random stream; they default to the
    position in ``targets``.
    """
    targets = np.asarray(targets, dtype=np.int64)
    if ordinals is None:
        ordinals = np.arange(targets.size, dtype=np.int64)
    ordinals = np.asarray(ordinals, dtype=np.int64)
    neg_hard, neg_rand = counts
    hard = state.draw_gnno(targets, ordinals, neg_hard)
    rand = state.draw_uniform(targets, ordinals, neg_rand)
    if state.audit is not None:
        state.audit(targets, hard, state.current_lambda)
    return NegativeBatch(targets, hard, rand)


class ExclusionAudit:
    """Counts hard negatives that violate ``J(target, j) <= lambda`` or ``j != target``."""

    def __init__(self, index: OverlapIndex):
        self.index = index
        self.draws = 0
        self.over_lambda = 0
        self.self_samples = 0
        self.max_overlap = 0.0

    def __call__(self, targets: np.ndarray, hard: np.ndarray, lam: float) -> None:
        if hard.size == 0:
            return
        tgt = np.broadcast_to(np.asarray(targets)[:, None], hard.shape)
        j = self.index.lookup(tgt, hard)
        self.draws += hard.size
        self.over_lambda += int(np.count_nonzero(j > lam))
        self.self_samples += int(np.count_nonzero(hard == tgt))
        self.max_overlap = max(self.max_overlap, float(j.max()))

    @property
    def clean(self) -> bool:
        return self.over_lambda == 0 and self.self_samples == 0


SAMPLERS = ("gnno", "uniform", "dns")


@dataclass(frozen=True)
class SamplerConfig:
    """Which sampler to train with and how many negatives of each kind.

    ``uniform`` draws ``neg_hard + neg_rand`` uniform negatives; ``dns``
    replaces the hard part with dynamic negatives from a pool of
    ``dns_pool_size`` uniform candidates.
    """

    sampler: str = "gnno"
    neg_hard: int = 9
    neg_rand: int = 16
    pace_c: float = 0.04
    initial_b: float = 0.0
    lambda_max: float = 0.5
    step_unit: str = EPOCH
    dns_pool_size: int = 10
    exclude_sequence_items: bool = False

    def __post_init__(self):
        if self.sampler not in SAMPLERS:
            raise ValueError(f"sampler must be one of {SAMPLERS}, got {self.sampler!r}")
        if self.neg_hard < 0 or self.neg_rand < 0:
            raise ValueError("negative counts must be >= 0")

    @classmethod
    def from_preset(cls, name: str, **overrides) -> "SamplerConfig":
        preset = PRESETS[name]
        fields = dict(
            neg_hard=preset.neg_hard,
            neg_rand=preset.neg_rand,
            pace_c=preset.pace_c,
            lambda_max=preset.lambda_max,
        )
        fields.update(overrides)
        return cls(**fields)

    def counts(self) -> tuple[int, int]:
        if self.sampler == "uniform":
            return 0, self.neg_hard + self.neg_rand
        return self.neg_hard, self.neg_rand

    def schedule(self, max_step: int) -> CurriculumSchedule:
        return CurriculumSchedule(
            pace_c=self.pace_c,
            initial_b=self.initial_b,
            lambda_max=self.lambda_max,
            step_unit=self.step_unit,
            max_step=max(1, max_step),
        )
