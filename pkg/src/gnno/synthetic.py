"""Block-structured synthetic interaction corpora.

Items are split into contiguous blocks, each arranged on a ring. A user's
sequence is a random walk: with probability ``stay_prob`` the next item is
a ring neighbor at most ``max_hop`` positions away inside the current
block, otherwise the walk jumps to a uniformly chosen item of another
block. Ring locality makes neighborhood overlap decay with ring distance,
so every overlap group is populated.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from gnno.dataset import InteractionCorpus, InteractionRecord, Vocab


@dataclass(frozen=True)
class BlockCorpusSpec:
    num_items: int = 500
    num_blocks: int = 10
    num_users: int = 2000
    length: int = 20
    stay_prob: float = 0.98
    max_hop: int = 3
    seed: int = 0

    def __post_init__(self):
        if self.num_blocks < 1 or self.num_items < self.num_blocks:
            raise ValueError("need at least one item per block")
        if self.length < 1 or self.num_users < 1 or self.max_hop < 1:
            raise ValueError("length, num_users and max_hop must be positive")
        if not 0 <= self.stay_prob <= 1:
            raise ValueError("stay_prob must lie in [0, 1]")

    def to_dict(self) -> dict:
        return asdict(self)


def block_sequences(spec: BlockCorpusSpec) -> list[list[int]]:
    rng = np.random.default_rng([spec.seed, 0xB10C])
    bounds = np.linspace(0, spec.num_items, spec.num_blocks + 1).round().astype(int)
    block_of = np.searchsorted(bounds, np.arange(spec.num_items), side="right") - 1
    hops = np.concatenate([np.arange(-spec.max_hop, 0), np.arange(1, spec.max_hop + 1)])
    sequences = []
    for _ in range(spec.num_users):
        item = int(rng.integers(spec.num_items))
        seq = [item]
        for _ in range(spec.length - 1):
            b = block_of[item]
            lo, size = bounds[b], bounds[b + 1] - bounds[b]
            if spec.num_blocks == 1 or rng.random() < spec.stay_prob:
                item = int(lo + (item - lo + rng.choice(hops)) % size)
            else:
                other = int(rng.integers(spec.num_blocks - 1))
                other += other >= b
                item = int(rng.integers(bounds[other], bounds[other + 1]))
            seq.append(item)
        sequences.append(seq)
    return sequences


def block_corpus(spec: BlockCorpusSpec = BlockCorpusSpec()) -> InteractionCorpus:
    """Corpus whose item indices equal the generator's item ids."""
    sequences = block_sequences(spec)
    items = Vocab(f"i{k}" for k in range(spec.num_items))
    users = Vocab(f"u{k}" for k in range(spec.num_users))
    return InteractionCorpus(sequences, items, users)


def block_records(spec: BlockCorpusSpec = BlockCorpusSpec()) -> list[InteractionRecord]:
    return [
        InteractionRecord(f"u{u}", f"i{item}", t)
        for u, seq in enumerate(block_sequences(spec))
        for t, item in enumerate(seq)
    ]


def write_log(records, sink, delimiter: str = "\t") -> None:
    for r in records:
        sink.write(f"{r.user_id}{delimiter}{r.item_id}{delimiter}{r.timestamp}\n")
