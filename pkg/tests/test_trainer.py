import json
import math

import numpy as np
import pytest

from conftest import index_from_dense
from gnno.negsampler import SamplerConfig, SamplerState
from gnno.trainer import (
    ModelParams,
    TrainConfig,
    Trainer,
    TrainingError,
    TrainingExamples,
    bpr_loss,
    loss_and_grad,
    pooling_matrix,
    score,
    train_epoch,
)


def numeric_grad(emb, pool, targets, negs, reduction, h=1e-4):
    grad = np.zeros_like(emb)
    for idx in np.ndindex(*emb.shape):
        old = emb[idx]
        emb[idx] = old + h
        up, _ = loss_and_grad(emb, pool, targets, negs, reduction)
        emb[idx] = old - h
        down, _ = loss_and_grad(emb, pool, targets, negs, reduction)
        emb[idx] = old
        grad[idx] = (up - down) / (2 * h)
    return grad


def relative_error(grad, fd):
    scale = max(np.linalg.norm(grad), np.linalg.norm(fd))
    return 0.0 if scale == 0 else float(np.linalg.norm(grad - fd) / scale)


def random_instance(rng, num_items=5, dim=4):
    emb = rng.normal(size=(num_items, dim))
    batch = int(rng.integers(1, 5))
    prefixes = [rng.integers(0, num_items, size=int(rng.integers(1, 4))).tolist() for _ in range(batch)]
    targets = rng.integers(0, num_items, size=batch)
    negs = rng.integers(0, num_items, size=(batch, int(rng.integers(1, 4))))
    return emb, prefixes, targets, negs


def cycle_sequences(num_items=20, count=200, length=12, seed=0):
    rng = np.random.default_rng(seed)
    starts = rng.integers(0, num_items, size=count)
    return [[(s + t) % num_items for t in range(length)] for s in starts]


def make_trainer(sequences, num_items, sampler="uniform", seed=0, sampler_config=None, **overrides):
    sampler_config = sampler_config or SamplerConfig(sampler=sampler, neg_hard=2, neg_rand=3)
    cfg = TrainConfig(seed=seed, sampler=sampler_config, **overrides)
    params = ModelParams.init(num_items, cfg.embedding_dim, seed, cfg.encoder)
    state = SamplerState(index_from_dense(np.zeros((num_items, num_items))), seed=seed)
    return Trainer(params, sequences, state, cfg)


class TestScore:
    def test_lastitem_unit_vectors(self):
        emb = np.zeros((3, 4))
        emb[0, 0] = emb[2, 0] = 1.0
        params = ModelParams(emb, encoder="lastitem")
        assert score(params, [0], 2) == 1.0

    def test_meanpool_cancellation(self):
        rng = np.random.default_rng(0)
        emb = rng.normal(size=(4, 3))
        emb[1] = -emb[0]
        params = ModelParams(emb)
        for item in range(4):
            assert abs(score(params, [0, 1], item)) < 1e-15

    def test_meanpool_by_hand(self):
        rng = np.random.default_rng(1)
        params = ModelParams(rng.normal(size=(10, 8)))
        prefix = [3, 1, 3, 7]
        expected = float(np.mean(params.item_embeddings[prefix], axis=0) @ params.item_embeddings[5])
        assert abs(score(params, prefix, 5) - expected) < 1e-6

    def test_empty_prefix(self):
        with pytest.raises(ValueError):
            score(ModelParams(np.ones((2, 2))), [], 0)

    def test_truncation(self):
        pool = pooling_matrix([[0, 1, 2, 3]], 4, "meanpool", max_len=2)
        assert np.allclose(pool.toarray(), [[0, 0, 0.5, 0.5]])


class TestBprLoss:
    def test_equal_scores(self):
        assert abs(bpr_loss(1.3, [1.3]) - math.log(2)) < 1e-12

    def test_margin_two(self):
        assert round(bpr_loss(2.0, [0.0]), 6) == 0.126928

    def test_asymptotes(self):
        assert 0 <= bpr_loss(40.0, [0.0]) < 1e-15
        assert abs(bpr_loss(0.0, [40.0]) - 40.0) < 1e-12
        assert math.isfinite(bpr_loss(0.0, [1e6]))

    def test_sums_negatives(self):
        assert abs(bpr_loss(0.0, [0.0, 0.0, 0.0]) - 3 * math.log(2)) < 1e-12

    def test_batch_loss_matches_scalar(self):
        rng = np.random.default_rng(3)
        emb, prefixes, targets, negs = random_instance(rng)
        params = ModelParams(emb)
        pool = pooling_matrix(prefixes, 5)
        loss, _ = loss_and_grad(emb, pool, targets, negs)
        expected = np.mean(
            [bpr_loss(score(params, p, t), [score(params, p, j) for j in n]) for p, t, n in zip(prefixes, targets, negs)]
        )
        assert abs(loss - expected) < 1e-12


class TestGradient:
    @pytest.mark.parametrize("encoder, reduction, seed", [
        ("meanpool", "sum", 0), ("meanpool", "mean", 1), ("lastitem", "sum", 2), ("lastitem", "mean", 3),
    ])
    def test_finite_differences(self, encoder, reduction, seed):
        rng = np.random.default_rng(seed)
        for _ in range(10):
            emb, prefixes, targets, negs = random_instance(rng)
            pool = pooling_matrix(prefixes, 5, encoder)
            _, grad = loss_and_grad(emb, pool, targets, negs, reduction)
            fd = numeric_grad(emb, pool, targets, negs, reduction)
            assert relative_error(grad, fd) <= 1e-3


class TestExamples:
    def test_three_item_sequence(self):
        ex = TrainingExamples.from_sequences([[0, 1, 2]], 3)
        assert len(ex) == 2
        assert ex.targets.tolist() == [1, 2]
        assert np.allclose(ex.pool.toarray(), [[1, 0, 0], [0.5, 0.5, 0]])

    def test_single_item_sequence_has_no_examples(self):
        assert len(TrainingExamples.from_sequences([[4], []], 5)) == 0


class TestTrainer:
    def test_epoch_counts(self):
        trainer = make_trainer(cycle_sequences(count=10, length=5), 20, batch_size=16)
        stats = train_epoch(trainer, 1)
        assert stats.examples == 40 and stats.batches == 3

    def test_deterministic(self):
        seqs = cycle_sequences(count=50)
        a = make_trainer(seqs, 20, sampler="gnno", seed=4, epochs=3, batch_size=64)
        b = make_trainer(seqs, 20, sampler="gnno", seed=4, epochs=3, batch_size=64)
        a.fit()
        b.fit()
        assert np.array_equal(a.params.item_embeddings, b.params.item_embeddings)

    def test_dns_runs(self):
        trainer = make_trainer(cycle_sequences(count=30), 20, sampler="dns", epochs=2, batch_size=64)
        history = trainer.fit()
        assert len(history) == 2 and all(math.isfinite(h.mean_loss) for h in history)

    def test_loss_halves_on_deterministic_transitions(self):
        # a mean over a cyclic prefix does not pin down the next item, so this uses lastitem
        trainer = make_trainer(cycle_sequences(), 20, epochs=30, batch_size=128, encoder="lastitem")
        initial = trainer.initial_loss()
        history = trainer.fit()
        assert history[-1].mean_loss < 0.5 * initial

    def test_untouched_rows_stay_at_init(self):
        # items 20..29 never occur in training; a few uniform negatives reach some of them
        sampler = SamplerConfig(sampler="uniform", neg_hard=0, neg_rand=1)
        trainer = make_trainer(cycle_sequences(count=3, length=4), 30, epochs=2, sampler_config=sampler)
        init = trainer.params.item_embeddings.copy()
        trainer.fit()
        moved = np.any(trainer.params.item_embeddings != init, axis=1)
        assert np.array_equal(moved, trainer.touched)
        assert not trainer.touched[20:].all()

    @pytest.mark.filterwarnings("ignore::RuntimeWarning")
    def test_nan_guard(self):
        trainer = make_trainer(cycle_sequences(count=5), 20)
        trainer.params.item_embeddings[0, 0] = np.nan
        with pytest.raises(TrainingError, match="epoch 1"):
            trainer.train_epoch(1)

    def test_log_written(self, tmp_path):
        trainer = make_trainer(cycle_sequences(count=5), 20, epochs=2)
        trainer.fit(log_path=tmp_path / "log.jsonl")
        rows = [json.loads(l) for l in (tmp_path / "log.jsonl").read_text().splitlines()]
        assert [r["epoch"] for r in rows] == [1, 2]

    def test_exclude_sequence_items(self):
        sampler = SamplerConfig(sampler="uniform", neg_hard=0, neg_rand=8, exclude_sequence_items=True)
        trainer = make_trainer(cycle_sequences(count=20, length=6), 20, sampler_config=sampler)
        ex = trainer.examples
        ids = np.arange(len(ex))
        negs = trainer._negatives(ex.pool, ex.targets, ids)
        dense = ex.pool.toarray() > 0
        assert not np.any(np.take_along_axis(dense, negs, axis=1))


class TestCheckpoint:
    def test_roundtrip(self, tmp_path):
        trainer = make_trainer(cycle_sequences(count=10), 20, epochs=1)
        trainer.fit()
        path = tmp_path / "model.npz"
        trainer.params.save(path, trainer.config.to_dict())
        params, cfg = ModelParams.load(path)
        assert np.array_equal(params.item_embeddings, trainer.params.item_embeddings)
        assert np.array_equal(params.adam_v, trainer.params.adam_v)
        assert params.adam_step == trainer.params.adam_step
        assert TrainConfig.from_dict(cfg) == trainer.config

    def test_init_bounds(self):
        params = ModelParams.init(100, 64, seed=1)
        assert np.abs(params.item_embeddings).max() <= 0.1 / 8
        assert np.array_equal(params.item_embeddings, ModelParams.init(100, 64, seed=1).item_embeddings)
