"""Leave-one-out evaluation with sampled candidate sets (HR@K, NDCG@K)."""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from gnno.dataset import SplitCorpus
from gnno.trainer import ModelParams, pooling_matrix

PHASES = ("valid", "test")


class EvaluationError(RuntimeError):
    pass


@dataclass(frozen=True)
class EvalProtocol:
    candidate_set_size: int = 1000
    k_values: tuple[int, ...] = (5, 20)
    seed: int = 0
    phase: str = "test"
    max_sequence_length: int = 50

    def __post_init__(self):
        object.__setattr__(self, "k_values", tuple(int(k) for k in self.k_values))
        if not self.k_values or min(self.k_values) < 1:
            raise ValueError("k_values must be positive")
        if self.candidate_set_size < max(self.k_values):
            raise ValueError("candidate_set_size must be >= max(k_values)")
        if self.phase not in PHASES:
            raise ValueError(f"phase must be one of {PHASES}")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["k_values"] = list(self.k_values)
        return d


@dataclass
class EvalReport:
    metrics: dict[str, float]
    user_count: int
    config: dict = field(default_factory=dict)

    def metric_names(self) -> list[str]:
        return list(self.metrics)

    def to_json(self) -> str:
        return json.dumps(
            {"metrics": self.metrics, "user_count": self.user_count, "config": self.config},
            sort_keys=True,
            indent=2,
        )

    def csv_header(self) -> str:
        return ",".join(["user_count", *self.metrics])

    def csv_row(self) -> str:
        return ",".join([str(self.user_count), *(repr(v) for v in self.metrics.values())])


def build_candidates(target: int, all_items: int, size: int, rng: np.random.Generator) -> np.ndarray:
    """Target first, then ``size - 1`` distinct other items drawn uniformly."""
    if size > all_items:
        raise ValueError(f"candidate set size {size} exceeds item count {all_items}")
    if size < 1:
        raise ValueError("candidate set size must be >= 1")
    if size == all_items:
        others = np.delete(np.arange(all_items), target)
    else:
        others = rng.choice(all_items - 1, size=size - 1, replace=False)
        others = others + (others >= target)
    return np.concatenate([[target], others]).astype(np.int64)


def rank_of_target(scores, target) -> int:
    """1 + number of other candidates scoring >= the target (ties count against it).

    ``scores`` is a sequence of ``(item, score)`` pairs containing the target.
    """
    target_score = None
    others = []
    for item, s in scores:
        if item == target and target_score is None:
            target_score = s
        else:
            others.append(s)
    if target_score is None:
        raise ValueError("target not among the scored candidates")
    return 1 + sum(1 for s in others if s >= target_score)


def _rank_first(scores: np.ndarray) -> int:
    # candidate 0 is the target
    return 1 + int(np.count_nonzero(scores[1:] >= scores[0]))


def hr_ndcg_at_k(rank: int, k: int) -> tuple[int, float]:
    if rank < 1:
        raise ValueError("rank must be >= 1")
    if rank > k:
        return 0, 0.0
    return 1, 1.0 / math.log2(rank + 1)


def user_ranks(params: ModelParams, split: SplitCorpus, protocol: EvalProtocol) -> tuple[list[int], np.ndarray]:
    targets = split.targets(protocol.phase)
    users = [u for u in split.eval_users if u in targets]
    if not users:
        raise EvaluationError("no users to evaluate")
    n = params.num_items
    if protocol.candidate_set_size > n:
        raise EvaluationError(f"candidate set size {protocol.candidate_set_size} exceeds item count {n}")
    histories = [split.history(u, protocol.phase) for u in users]
    enc = pooling_matrix(histories, n, params.encoder, protocol.max_sequence_length) @ params.item_embeddings
    phase_code = PHASES.index(protocol.phase)
    ranks = np.empty(len(users), dtype=np.int64)
    for pos, user in enumerate(users):
        rng = np.random.default_rng([protocol.seed, user, phase_code])
        cands = build_candidates(targets[user], n, protocol.candidate_set_size, rng)
        ranks[pos] = _rank_first(params.item_embeddings[cands] @ enc[pos])
    return users, ranks


def metrics_from_ranks(ranks: np.ndarray, k_values: Sequence[int]) -> dict[str, float]:
    ranks = np.asarray(ranks)
    out = {}
    for k in k_values:
        hit = ranks <= k
        out[f"HR@{k}"] = float(np.mean(hit))
    for k in k_values:
        hit = ranks <= k
        out[f"NDCG@{k}"] = float(np.mean(np.where(hit, 1.0 / np.log2(ranks + 1.0), 0.0)))
    return out


def evaluate(params: ModelParams, split: SplitCorpus, protocol: EvalProtocol = EvalProtocol()) -> EvalReport:
    users, ranks = user_ranks(params, split, protocol)
    return EvalReport(metrics_from_ranks(ranks, protocol.k_values), len(users), protocol.to_dict())
