"""Graph storage, batching, dense packing, k-NN construction, permutation."""

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from gnnbench import tensor as T
from gnnbench.errors import DimensionError, ValidationError
from gnnbench.graphs import (
    GraphBatch,
    KnnConfig,
    SparseGraph,
    batch_graphs,
    build_graph,
    knn_graph,
    permute_nodes,
    to_dense_tensor,
)

from helpers import check_gradients

RNG = np.random.default_rng(77)


def random_graph(rng, n_max=12, p=0.3):
    n = int(rng.integers(2, n_max + 1))
    mask = rng.random((n, n)) < p
    np.fill_diagonal(mask, False)
    src, dst = np.nonzero(mask)
    g = SparseGraph(n, np.stack([src, dst], axis=1),
                    node_feat=rng.normal(size=(n, 3)),
                    edge_feat=rng.normal(size=(len(src), 2)))
    return g


class TestBuildGraph:
    def test_two_node_cycle_degrees(self):
        g = build_graph(2, [(0, 1), (1, 0)])
        np.testing.assert_array_equal(g.in_degrees, [1, 1])
        np.testing.assert_array_equal(g.out_degrees, [1, 1])

    def test_triangle_neighbors(self):
        arcs = [(i, j) for i in range(3) for j in range(3) if i != j]
        g = build_graph(3, arcs)
        for i in range(3):
            assert set(g.in_neighbors(i)) == {0, 1, 2} - {i}
            assert set(g.out_neighbors(i)) == {0, 1, 2} - {i}

    def test_endpoint_out_of_range(self):
        with pytest.raises(IndexError):
            build_graph(2, [(0, 2)])

    def test_duplicate_arc_rejected(self):
        with pytest.raises(ValidationError):
            build_graph(3, [(0, 1), (0, 1)])

    def test_edge_feat_row_count_checked(self):
        with pytest.raises(ValidationError):
            build_graph(2, [(0, 1)], edge_feat=np.zeros((3, 1)))

    def test_csr_round_trip(self):
        g = random_graph(RNG)
        # reconstruct arcs from the in-CSR view
        rebuilt = []
        for i in range(g.n):
            for j in g.in_neighbors(i):
                rebuilt.append((j, i))
        assert sorted(rebuilt) == sorted(zip(g.src.tolist(), g.dst.tolist()))

    def test_csr_offsets_monotone(self):
        g = random_graph(RNG)
        assert (np.diff(g.in_offsets) >= 0).all()
        assert g.in_offsets[-1] == g.n_edges
        assert g.out_offsets[-1] == g.n_edges


class TestBatchGraphs:
    def test_single_graph_identity(self):
        g = random_graph(RNG)
        b = batch_graphs([g])
        assert b.n == g.n and b.n_edges == g.n_edges
        np.testing.assert_array_equal(b.graph_offsets, [0, g.n])
        np.testing.assert_array_equal(b.src, g.src)

    def test_offset_arithmetic(self):
        g1 = build_graph(3, [(0, 1)])
        g2 = build_graph(4, [(1, 2), (3, 0)])
        b = batch_graphs([g1, g2])
        assert b.n == 7
        np.testing.assert_array_equal(b.src, [0, 4, 6])
        np.testing.assert_array_equal(b.dst, [1, 5, 3])
        np.testing.assert_array_equal(b.node_to_graph, [0, 0, 0, 1, 1, 1, 1])

    def test_block_diagonal(self):
        gs = [random_graph(RNG) for _ in range(5)]
        b = batch_graphs(gs)
        for s, d in zip(b.src, b.dst):
            assert b.node_to_graph[s] == b.node_to_graph[d]

    def test_round_trip_100_random_graphs(self):
        rng = np.random.default_rng(5)
        gs = [random_graph(rng) for _ in range(100)]
        out = batch_graphs(gs).unbatch()
        assert len(out) == 100
        for a, b in zip(gs, out):
            assert a.n == b.n
            np.testing.assert_array_equal(a.structural_key(), b.structural_key())

    def test_feature_mismatch_rejected(self):
        g1 = build_graph(2, [(0, 1)], node_feat=np.zeros((2, 3)))
        g2 = build_graph(2, [(0, 1)], node_feat=np.zeros((2, 4)))
        with pytest.raises(ValidationError):
            batch_graphs([g1, g2])

    def test_empty_list_rejected(self):
        with pytest.raises(ValidationError):
            batch_graphs([])

    @given(st.lists(st.integers(2, 6), min_size=1, max_size=5), st.integers(0, 2**31 - 1))
    @settings(max_examples=25, deadline=None)
    def test_sizes_always_consistent(self, sizes, seed):
        rng = np.random.default_rng(seed)
        gs = []
        for n in sizes:
            mask = rng.random((n, n)) < 0.4
            np.fill_diagonal(mask, False)
            src, dst = np.nonzero(mask)
            gs.append(SparseGraph(n, np.stack([src, dst], axis=1)))
        b = batch_graphs(gs)
        assert b.n == sum(sizes)
        np.testing.assert_array_equal(b.graph_sizes, sizes)
        assert b.n_edges == sum(g.n_edges for g in gs)


class TestDenseTensor:
    def test_two_node_layout(self):
        g = build_graph(2, [(0, 1)])
        h = np.array([[2.0], [3.0]])
        out = to_dense_tensor(g, h)
        assert out.shape == (2, 2, 2)
        assert out.data[0, 1, 0] == 1.0 and out.data[1, 0, 0] == 0.0
        assert out.data[0, 0, 1] == 2.0 and out.data[1, 1, 1] == 3.0
        assert out.data[0, 1, 1] == 0.0

    def test_channel_zero_is_adjacency(self):
        g = random_graph(RNG)
        out = to_dense_tensor(g, np.zeros((g.n, 2)))
        adj = np.zeros((g.n, g.n))
        adj[g.src, g.dst] = 1.0
        np.testing.assert_array_equal(out.data[:, :, 0], adj)

    def test_edge_channels(self):
        g = build_graph(3, [(0, 1), (2, 0)], )
        e = np.array([[5.0, 6.0], [7.0, 8.0]])
        out = to_dense_tensor(g, np.zeros((3, 1)), e)
        np.testing.assert_array_equal(out.data[0, 1, 2:], [5.0, 6.0])
        np.testing.assert_array_equal(out.data[2, 0, 2:], [7.0, 8.0])
        assert np.abs(out.data[1, :, 2:]).sum() == 0.0

    def test_permutation_conjugates_channels(self):
        g = random_graph(RNG)
        h = RNG.normal(size=(g.n, 2))
        perm = RNG.permutation(g.n)
        gp = permute_nodes(g, perm)
        a = to_dense_tensor(g, h).data
        b = to_dense_tensor(gp, _permuted(h, perm)).data
        # relabeling conjugates every channel: b[perm[i], perm[j]] == a[i, j]
        np.testing.assert_array_equal(b[perm][:, perm], a)

    def test_gradients_flow(self):
        g = build_graph(4, [(0, 1), (1, 2), (3, 0)])
        h = RNG.normal(size=(4, 2))
        e = RNG.normal(size=(3, 2))
        check_gradients(
            lambda hv, ev: (to_dense_tensor(g, hv, ev) * to_dense_tensor(g, hv, ev)).sum(),
            [h, e],
        )

    def test_shape_checks(self):
        g = build_graph(2, [(0, 1)])
        with pytest.raises(DimensionError):
            to_dense_tensor(g, np.zeros((3, 1)))
        with pytest.raises(DimensionError):
            to_dense_tensor(g, np.zeros((2, 1)), np.zeros((2, 1)))


def _inv(perm):
    inv = np.empty_like(perm)
    inv[perm] = np.arange(perm.size)
    return inv


def _permuted(h, perm):
    out = np.empty_like(h)
    out[perm] = h
    return out


class TestKnnGraph:
    def test_coincident_twins(self):
        pts = np.array([[0.0, 0.0], [0.0, 0.0], [5.0, 5.0], [5.0, 5.0]])
        g = knn_graph(pts, KnnConfig(k=1))
        pairs = set(zip(g.src.tolist(), g.dst.tolist()))
        assert pairs == {(0, 1), (1, 0), (2, 3), (3, 2)}
        np.testing.assert_allclose(g.edge_feat.ravel(), 1.0, atol=0)

    def test_line_matches_brute_force(self):
        pts = np.array([[0.0, 0.0], [1.0, 0.0], [2.0, 0.0], [3.0, 0.0]])
        g = knn_graph(pts, KnnConfig(k=2))
        want = {0: {1, 2}, 1: {0, 2}, 2: {1, 3}, 3: {2, 1}}
        for i in range(4):
            assert set(g.out_neighbors(i)) == want[i]

    def test_weights_in_unit_interval(self):
        pts = RNG.random((30, 2))
        g = knn_graph(pts, KnnConfig(k=5))
        w = g.edge_feat.ravel()
        assert (w > 0).all() and (w <= 1).all()

    def test_k_too_large(self):
        with pytest.raises(ValidationError):
            knn_graph(RNG.random((4, 2)), KnnConfig(k=4))

    def test_distance_mode(self):
        pts = RNG.random((10, 2))
        g = knn_graph(pts, KnnConfig(k=3, weight_mode="distance"))
        d = np.linalg.norm(pts[g.src] - pts[g.dst], axis=1)
        np.testing.assert_allclose(g.edge_feat.ravel(), d, atol=1e-14)

    def test_translation_rotation_invariance(self):
        pts = RNG.random((25, 2))
        theta = 0.7
        rot = np.array([[np.cos(theta), -np.sin(theta)], [np.sin(theta), np.cos(theta)]])
        moved = pts @ rot.T + np.array([3.0, -1.0])
        a = knn_graph(pts, KnnConfig(k=4))
        b = knn_graph(moved, KnnConfig(k=4))
        np.testing.assert_array_equal(a.src, b.src)
        np.testing.assert_array_equal(a.dst, b.dst)
        assert np.abs(a.edge_feat - b.edge_feat).max() < 1e-12


class TestPermuteNodes:
    def test_identity(self):
        g = random_graph(RNG)
        gp = permute_nodes(g, np.arange(g.n))
        np.testing.assert_array_equal(gp.structural_key(), g.structural_key())
        np.testing.assert_array_equal(gp.node_feat, g.node_feat)

    def test_involution(self):
        g = random_graph(RNG)
        perm = RNG.permutation(g.n)
        back = permute_nodes(permute_nodes(g, perm), _inv(perm))
        np.testing.assert_array_equal(back.structural_key(), g.structural_key())
        np.testing.assert_array_equal(back.node_feat, g.node_feat)

    def test_degree_multiset_preserved(self):
        rng = np.random.default_rng(9)
        g = random_graph(rng)
        for _ in range(100):
            gp = permute_nodes(g, rng.permutation(g.n))
            assert sorted(gp.in_degrees) == sorted(g.in_degrees)
            assert sorted(gp.out_degrees) == sorted(g.out_degrees)

    def test_feature_follows_node(self):
        g = build_graph(3, [(0, 1)], node_feat=np.array([[1.0], [2.0], [3.0]]))
        perm = np.array([2, 0, 1])  # node 0 becomes node 2
        gp = permute_nodes(g, perm)
        np.testing.assert_array_equal(gp.node_feat.ravel(), [2.0, 3.0, 1.0])
        assert (gp.src[0], gp.dst[0]) == (2, 0)

    def test_non_bijection_rejected(self):
        g = build_graph(3, [(0, 1)])
        with pytest.raises(ValidationError):
            permute_nodes(g, np.array([0, 0, 1]))
