"""Desk-scale sequential recommender trained with multi-negative BPR.

The scorer is ``dot(encode(prefix), E[item])`` where ``encode`` is either
the mean of the prefix embedding rows (``meanpool``) or the last row
(``lastitem``). Encoders are expressed as a sparse pooling matrix ``P`` so
``encode(batch) = P @ E`` and its gradient is ``P.T @ g``.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
import scipy.sparse as sp
from scipy.special import expit

from gnno.negsampler import BATCH, SamplerConfig, SamplerState

logger = logging.getLogger(__name__)

CHECKPOINT_VERSION = 1
ENCODERS = ("meanpool", "lastitem")


class TrainingError(RuntimeError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 30
    batch_size: int = 4096
    learning_rate: float = 1e-3
    embedding_dim: int = 64
    seed: int = 0
    max_sequence_length: int = 50
    encoder: str = "meanpool"
    neg_reduction: str = "sum"
    sampler: SamplerConfig = field(default_factory=SamplerConfig)

    def __post_init__(self):
        for name in ("epochs", "batch_size", "embedding_dim", "max_sequence_length"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be positive")
        if self.encoder not in ENCODERS:
            raise ValueError(f"encoder must be one of {ENCODERS}")
        if self.neg_reduction not in ("sum", "mean"):
            raise ValueError("neg_reduction must be 'sum' or 'mean'")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        d = dict(d)
        d["sampler"] = SamplerConfig(**d.get("sampler", {}))
        return cls(**d)


@dataclass
class ModelParams:
    item_embeddings: np.ndarray
    encoder: str = "meanpool"
    adam_m: np.ndarray | None = None
    adam_v: np.ndarray | None = None
    adam_step: int = 0

    def __post_init__(self):
        if self.adam_m is None:
            self.adam_m = np.zeros_like(self.item_embeddings)
        if self.adam_v is None:
            self.adam_v = np.zeros_like(self.item_embeddings)

    @classmethod
    def init(cls, num_items: int, dim: int = 64, seed: int = 0, encoder: str = "meanpool") -> "ModelParams":
        bound = 0.1 / math.sqrt(dim)
        rng = np.random.default_rng([seed, 0x5EED])
        return cls(rng.uniform(-bound, bound, size=(num_items, dim)), encoder)

    @property
    def num_items(self) -> int:
        return self.item_embeddings.shape[0]

    def encode(self, prefixes: Sequence[Sequence[int]], max_len: int | None = None) -> np.ndarray:
        return pooling_matrix(prefixes, self.num_items, self.encoder, max_len) @ self.item_embeddings

    def save(self, path, config: dict | None = None) -> None:
        with open(path, "wb") as fh:
            np.savez(
                fh,
                version=np.array(CHECKPOINT_VERSION),
                config=np.array(json.dumps(config or {}, sort_keys=True)),
                encoder=np.array(self.encoder),
                item_embeddings=self.item_embeddings,
                adam_m=self.adam_m,
                adam_v=self.adam_v,
                adam_step=np.array(self.adam_step),
            )

    @classmethod
    def load(cls, path) -> tuple["ModelParams", dict]:
        with np.load(path) as z:
            version = int(z["version"])
            if version != CHECKPOINT_VERSION:
                raise ValueError(f"unsupported checkpoint version {version}")
            params = cls(
                z["item_embeddings"].copy(),
                str(z["encoder"]),
                z["adam_m"].copy(),
                z["adam_v"].copy(),
                int(z["adam_step"]),
            )
            return params, json.loads(str(z["config"]))


def pooling_matrix(
    prefixes: Sequence[Sequence[int]], num_items: int, encoder: str = "meanpool", max_len: int | None = None
) -> sp.csr_matrix:
    """Sparse ``(len(prefixes), num_items)`` matrix with ``P @ E = encode``."""
    rows, cols, vals = [], [], []
    for b, prefix in enumerate(prefixes):
        if len(prefix) == 0:
            raise ValueError(f"empty prefix at position {b}")
        if max_len is not None:
            prefix = prefix[-max_len:]
        if encoder == "meanpool":
            rows.extend([b] * len(prefix))
            cols.extend(prefix)
            vals.extend([1.0 / len(prefix)] * len(prefix))
        elif encoder == "lastitem":
            rows.append(b)
            cols.append(prefix[-1])
            vals.append(1.0)
        else:
            raise ValueError(f"unknown encoder {encoder!r}")
    mat = sp.csr_matrix((vals, (rows, cols)), shape=(len(prefixes), num_items))
    mat.sum_duplicates()
    mat.sort_indices()
    return mat


def score(params: ModelParams, prefix: Sequence[int], item: int) -> float:
    if len(prefix) == 0:
        raise ValueError("prefix must be nonempty")
    enc = params.encode([prefix])[0]
    return float(enc @ params.item_embeddings[item])


def bpr_loss(pos_score: float, neg_scores: Sequence[float]) -> float:
    """Sum over negatives of ``-log sigmoid(pos - neg) = softplus(neg - pos)``."""
    diff = np.asarray(neg_scores, dtype=np.float64) - pos_score
    return float(np.logaddexp(0.0, diff).sum())


def loss_and_grad(
    emb: np.ndarray,
    pool: sp.csr_matrix,
    targets: np.ndarray,
    negatives: np.ndarray,
    neg_reduction: str = "sum",
) -> tuple[float, np.ndarray]:
    """Batch-mean BPR loss and its dense gradient w.r.t. ``emb``.

    Negatives of one example are summed (or averaged) before the batch mean.
    """
    batch, m = negatives.shape
    enc = pool @ emb
    pos_rows = emb[targets]
    neg_rows = emb[negatives]
    pos = np.einsum("bd,bd->b", enc, pos_rows)
    neg = np.einsum("bd,bmd->bm", enc, neg_rows)
    diff = neg - pos[:, None]
    scale = 1.0 / batch / (m if neg_reduction == "mean" and m else 1)
    loss = float(np.logaddexp(0.0, diff).sum() * scale)

    g_neg = expit(diff) * scale
    g_pos = -g_neg.sum(axis=1)
    g_enc = g_pos[:, None] * pos_rows + np.einsum("bm,bmd->bd", g_neg, neg_rows)
    ex = np.arange(batch)
    scatter = sp.csr_matrix(
        (
            np.concatenate([g_pos, g_neg.ravel()]),
            (np.concatenate([targets, negatives.ravel()]), np.concatenate([ex, np.repeat(ex, m)])),
        ),
        shape=(emb.shape[0], batch),
    )
    grad = pool.T @ g_enc + scatter @ enc
    return loss, np.asarray(grad)


def adam_update(params: ModelParams, grad: np.ndarray, lr: float, betas=(0.9, 0.999), eps=1e-8) -> None:
    b1, b2 = betas
    params.adam_step += 1
    t = params.adam_step
    params.adam_m *= b1
    params.adam_m += (1 - b1) * grad
    params.adam_v *= b2
    params.adam_v += (1 - b2) * grad * grad
    m_hat = params.adam_m / (1 - b1**t)
    v_hat = params.adam_v / (1 - b2**t)
    params.item_embeddings -= lr * m_hat / (np.sqrt(v_hat) + eps)


@dataclass
class TrainingExamples:
    """All (prefix, target) pairs of the training sequences, one per time step >= 2."""

    pool: sp.csr_matrix
    targets: np.ndarray
    users: np.ndarray

    def __len__(self):
        return len(self.targets)

    @classmethod
    def from_sequences(
        cls, sequences: Sequence[Sequence[int]], num_items: int, encoder: str = "meanpool", max_len: int = 50
    ) -> "TrainingExamples":
        prefixes, targets, users = [], [], []
        for user, seq in enumerate(sequences):
            for t in range(1, len(seq)):
                prefixes.append(seq[max(0, t - max_len) : t])
                targets.append(seq[t])
                users.append(user)
        pool = pooling_matrix(prefixes, num_items, encoder) if prefixes else sp.csr_matrix((0, num_items))
        return cls(pool, np.asarray(targets, dtype=np.int64), np.asarray(users, dtype=np.int64))


@dataclass
class EpochStats:
    epoch: int
    mean_loss: float
    lambda_used: float
    examples: int
    batches: int

    def to_dict(self) -> dict:
        return asdict(self)


def _in_prefix(pool: sp.csr_matrix, negs: np.ndarray) -> np.ndarray:
    """Mask of negatives that occur in their example's prefix."""
    rows = np.repeat(np.arange(pool.shape[0], dtype=np.int64), np.diff(pool.indptr))
    keys = rows * pool.shape[1] + pool.indices
    q = np.arange(negs.shape[0], dtype=np.int64)[:, None] * pool.shape[1] + negs
    pos = np.minimum(np.searchsorted(keys, q), max(len(keys) - 1, 0))
    return keys[pos] == q if len(keys) else np.zeros(negs.shape, dtype=bool)


class Trainer:
    """Mini-batch BPR training with a pluggable negative sampler."""

    def __init__(
        self,
        params: ModelParams,
        train_sequences: Sequence[Sequence[int]],
        state: SamplerState,
        config: TrainConfig,
    ):
        self.params = params
        self.state = state
        self.config = config
        self.examples = TrainingExamples.from_sequences(
            train_sequences, params.num_items, config.encoder, config.max_sequence_length
        )
        self.schedule = config.sampler.schedule(config.epochs)
        self.batch_counter = 0
        self.touched = np.zeros(params.num_items, dtype=bool)

    def _negatives(self, pool, targets, ordinals) -> np.ndarray:
        cfg = self.config.sampler
        neg_hard, neg_rand = cfg.counts()
        state = self.state

        def draw(offset):
            if cfg.sampler == "dns":
                enc = pool @ self.params.item_embeddings

                def score_fn(cands):
                    return np.einsum("bd,bnpd->bnp", enc, self.params.item_embeddings[cands])

                hard = state.draw_dns(targets, ordinals, neg_hard, cfg.dns_pool_size, score_fn, offset)
            else:
                hard = state.draw_gnno(targets, ordinals, neg_hard, offset)
            rand = state.draw_uniform(targets, ordinals, neg_rand, offset)
            return hard, rand

        hard, rand = draw(0)
        if cfg.exclude_sequence_items:
            m = max(neg_hard, neg_rand, 1)
            for part in (0, 1):
                for attempt in range(1, 65):
                    current = (hard, rand)[part]
                    clash = _in_prefix(pool, current)
                    if not clash.any():
                        break
                    fresh = draw(attempt * m)[part]
                    current[clash] = fresh[clash]
                else:
                    raise TrainingError("could not draw negatives outside the input sequence")
        if state.audit is not None and cfg.sampler == "gnno":
            state.audit(targets, hard, state.current_lambda)
        return np.concatenate([hard, rand], axis=1)

    def train_epoch(self, epoch: int) -> EpochStats:
        cfg = self.config
        n = len(self.examples)
        if cfg.sampler.step_unit != BATCH:
            self.state.advance(self.schedule, epoch)
        order = np.random.default_rng([cfg.seed, epoch, 0xE90C]).permutation(n)
        total, batches = 0.0, 0
        for start in range(0, n, cfg.batch_size):
            ids = np.sort(order[start : start + cfg.batch_size])
            self.batch_counter += 1
            if cfg.sampler.step_unit == BATCH:
                self.state.advance(self.schedule, self.batch_counter)
            pool = self.examples.pool[ids]
            targets = self.examples.targets[ids]
            negs = self._negatives(pool, targets, ids)
            loss, grad = loss_and_grad(self.params.item_embeddings, pool, targets, negs, cfg.neg_reduction)
            if not math.isfinite(loss) or not np.all(np.isfinite(grad)):
                raise TrainingError(f"non-finite loss/gradient at epoch {epoch}, batch {batches}: loss={loss}")
            self.touched[pool.indices] = True
            self.touched[targets] = True
            self.touched[negs.ravel()] = True
            adam_update(self.params, grad, cfg.learning_rate)
            if not np.all(np.isfinite(self.params.item_embeddings)):
                raise TrainingError(f"non-finite parameters after epoch {epoch}, batch {batches}")
            total += loss * len(ids)
            batches += 1
        return EpochStats(epoch, total / max(n, 1), self.state.current_lambda, n, batches)

    def initial_loss(self) -> float:
        """Mean loss at the current parameters with negatives drawn as in epoch 1."""
        self.state.advance(self.schedule, 1)
        ids = np.arange(len(self.examples))
        pool = self.examples.pool
        negs = self._negatives(pool, self.examples.targets, ids)
        loss, _ = loss_and_grad(self.params.item_embeddings, pool, self.examples.targets, negs, self.config.neg_reduction)
        return loss

    def fit(self, on_epoch_end: Callable[[int, ModelParams, EpochStats], None] | None = None, log_path=None):
        history = []
        log = open(log_path, "a", encoding="utf-8") if log_path else None
        try:
            for epoch in range(1, self.config.epochs + 1):
                stats = self.train_epoch(epoch)
                history.append(stats)
                logger.info("epoch %d loss %.5f lambda %.3f", epoch, stats.mean_loss, stats.lambda_used)
                if log:
                    log.write(json.dumps(stats.to_dict(), sort_keys=True) + "\n")
                if on_epoch_end:
                    on_epoch_end(epoch, self.params, stats)
        finally:
            if log:
                log.close()
        return history


def train_epoch(trainer: Trainer, epoch_index: int) -> EpochStats:
    return trainer.train_epoch(epoch_index)
