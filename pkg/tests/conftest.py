import math
from collections import defaultdict

import numpy as np
import pytest

from gnno.dataset import InteractionCorpus, Vocab, leave_one_out_split
from gnno.overlap import OverlapIndex
from gnno.witg import WitgConfig, build_witg


def naive_witg(sequences, window, allow_self_loops=False):
    """Reference edge weights: materialise every (m, m+k) pair on its own."""
    weights = defaultdict(float)
    for seq in sequences:
        for m in range(len(seq)):
            for k in range(1, window + 1):
                if m + k >= len(seq):
                    break
                a, b = seq[m], seq[m + k]
                if a == b and not allow_self_loops:
                    continue
                weights[(min(a, b), max(a, b))] += 1.0 / k
    return dict(weights)


def set_jaccard(nbrs, i, j):
    a, b = nbrs[i], nbrs[j]
    union = len(a | b)
    return 0.0 if union == 0 else len(a & b) / union


def brute_gnno(jac, target, lam):
    """Full softmax of exp(J) over items minus target minus {J > lam}; None if nothing is left."""
    n = len(jac)
    w = np.array([0.0 if j == target or jac[j] > lam else math.exp(jac[j]) for j in range(n)])
    total = w.sum()
    return None if total == 0 else w / total


def index_from_dense(jac):
    """OverlapIndex holding the nonzero off-diagonal entries of a symmetric matrix."""
    jac = np.asarray(jac, dtype=float)
    mask = (jac != 0) & ~np.eye(len(jac), dtype=bool)
    indptr = np.concatenate([[0], np.cumsum(mask.sum(axis=1))])
    return OverlapIndex(len(jac), indptr, np.nonzero(mask)[1], jac[mask])


def dense_jaccard(graph):
    nbrs = [set(graph.neighbors(i).tolist()) for i in range(graph.num_nodes)]
    n = graph.num_nodes
    return np.array([[0.0 if i == j else set_jaccard(nbrs, i, j) for j in range(n)] for i in range(n)])


def split_of(sequences, num_items):
    """Leave-one-out split over index-level sequences with placeholder vocabularies."""
    corpus = InteractionCorpus(
        [list(map(int, s)) for s in sequences],
        Vocab(str(i) for i in range(num_items)),
        Vocab(f"u{u}" for u in range(len(sequences))),
    )
    return leave_one_out_split(corpus)


def random_sequences(rng, num_items, max_seqs=100, max_len=20):
    count = int(rng.integers(1, max_seqs + 1))
    return [list(rng.integers(0, num_items, size=int(rng.integers(0, max_len + 1)))) for _ in range(count)]


def random_graph(rng, max_nodes=60):
    n = int(rng.integers(2, max_nodes + 1))
    seqs = random_sequences(rng, n, max_seqs=int(rng.integers(1, 40)), max_len=8)
    return build_witg(seqs, WitgConfig(window=int(rng.integers(1, 4))), num_nodes=n)


@pytest.fixture
def path_graph():
    # items a, b, c, d = 0, 1, 2, 3 from the single sequence [a, b, c, d], window 2
    return build_witg([[0, 1, 2, 3]], WitgConfig(window=2))


@pytest.fixture
def five_items():
    # target 0 with J(0, 1) = 0.2, J(0, 2) = 0.5, nothing stored for items 3 and 4
    jac = np.zeros((5, 5))
    jac[0, 1] = jac[1, 0] = 0.2
    jac[0, 2] = jac[2, 0] = 0.5
    return index_from_dense(jac)
