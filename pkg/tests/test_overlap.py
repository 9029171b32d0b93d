import io

import numpy as np
import pytest

from conftest import random_graph, set_jaccard
from gnno.overlap import OverlapGroup, OverlapIndex, build_overlap_index, group_of, jaccard, pivot_cost
from gnno.witg import TransitionGraph, WitgConfig, build_witg


def neighbor_sets(graph):
    return [set(graph.neighbors(i).tolist()) for i in range(graph.num_nodes)]


class TestJaccard:
    def test_one_third(self):
        # N(0) = {2, 3}, N(1) = {3, 4}
        g = TransitionGraph.from_edges(5, [0, 0, 1, 1], [2, 3, 3, 4], [1.0] * 4)
        assert jaccard(g, 0, 1) == 1 / 3

    def test_identical(self):
        g = TransitionGraph.from_edges(3, [0, 1], [2, 2], [1.0, 1.0])
        assert jaccard(g, 0, 1) == 1.0

    def test_disjoint_and_isolated(self):
        g = TransitionGraph.from_edges(5, [0, 1], [2, 3], [1.0, 1.0])
        assert jaccard(g, 0, 1) == 0.0
        assert jaccard(g, 4, 4) == 0.0  # both empty

    def test_index_check(self, path_graph):
        with pytest.raises(IndexError):
            jaccard(path_graph, 0, 9)


class TestIndex:
    def test_path_graph(self, path_graph):
        idx = build_overlap_index(path_graph)
        assert idx.lookup(0, 3) == 1.0
        assert idx.lookup(0, 1) == 0.25
        assert idx.lookup(3, 0) == 1.0

    def test_isolated_items_absent(self):
        g = build_witg([[0, 1]], WitgConfig(), num_nodes=4)
        idx = build_overlap_index(g)
        assert len(idx.row(2)[0]) == 0 and len(idx.row(3)[0]) == 0

    def test_oracle_random_graphs(self):
        rng = np.random.default_rng(5)
        for _ in range(40):
            g = random_graph(rng)
            idx = build_overlap_index(g)
            nbrs = neighbor_sets(g)
            n = g.num_nodes
            dense = np.zeros((n, n))
            for i in range(n):
                cols, vals = idx.row(i)
                dense[i, cols] = vals
                assert i not in cols
            for i in range(n):
                for j in range(n):
                    if i == j:
                        continue
                    assert dense[i, j] == set_jaccard(nbrs, i, j)
                    assert (dense[i, j] > 0) == bool(nbrs[i] & nbrs[j])
            assert np.array_equal(dense, dense.T)
            assert np.all((idx.values > 0) & (idx.values <= 1))

    def test_self_overlap_is_one(self, path_graph):
        for i in range(path_graph.num_nodes):
            assert jaccard(path_graph, i, i) == 1.0

    def test_min_edge_weight(self, path_graph):
        # dropping the 0.5-weight hops leaves the chain 0-1-2-3
        idx = build_overlap_index(path_graph, min_edge_weight=1.0)
        assert idx.lookup(0, 2) == 0.5  # {1} vs {1, 3}
        assert idx.lookup(0, 3) == 0.0

    def test_serialize_roundtrip(self, path_graph):
        idx = build_overlap_index(path_graph)
        buf = io.StringIO()
        idx.serialize(buf)
        first = buf.getvalue().splitlines()[0].split("\t")
        assert int(first[0]) < int(first[1])
        assert OverlapIndex.deserialize(io.StringIO(buf.getvalue()), 4) == idx

    def test_pivot_cost(self, path_graph):
        assert pivot_cost(path_graph) == 2 * 2 + 3 * 3 + 3 * 3 + 2 * 2


class TestGroups:
    @pytest.mark.parametrize(
        "value, group",
        [
            (0.0, OverlapGroup.ZERO),
            (1e-9, OverlapGroup.LOW),
            (0.15, OverlapGroup.LOW),
            (0.1500001, OverlapGroup.MEDIUM),
            (0.3, OverlapGroup.MEDIUM),
            (0.31, OverlapGroup.HIGH),
            (1.0, OverlapGroup.HIGH),
        ],
    )
    def test_partition(self, value, group):
        assert group_of(value) is group

    @pytest.mark.parametrize("value", [-0.1, 1.01])
    def test_out_of_range(self, value):
        with pytest.raises(ValueError):
            group_of(value)
