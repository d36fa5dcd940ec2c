"""Task heads, losses, and metrics: worked examples plus invariants."""

import numpy as np
import pytest

from gnnbench import tensor as T
from gnnbench.errors import ConfigError, DimensionError, ValidationError
from gnnbench.graphs import batch_graphs, build_graph, permute_nodes
from gnnbench.heads import (
    EdgeHead,
    GraphHead,
    LayerwiseGraphHead,
    NodeHead,
    RingGNNGraphHead,
    RingGNNNodeHead,
    TaskSpec,
    ThreeWLGraphHead,
    ThreeWLNodeHead,
    WLEdgeHead,
    graph_mean_pool,
)
from gnnbench import losses as L
from gnnbench import metrics as M

from helpers import check_gradients, module_grad_check


def _linear(lin, x):
    out = x @ lin.weight.data
    return out + lin.bias.data if lin.bias is not None else out


def _mlp(mlp, x):
    for i, lin in enumerate(mlp.layers):
        x = _linear(lin, x)
        if i + 1 < len(mlp.layers):
            x = np.maximum(x, 0.0)
    return x


def _conj(x, perm):
    return x[perm][:, perm]


def _arc_sorted(g, rows, perm=None):
    """Rows reordered by canonical arc key, optionally relabeling endpoints."""
    src = g.src if perm is None else perm[g.src]
    dst = g.dst if perm is None else perm[g.dst]
    return rows[np.argsort(src * g.n + dst)]


class TestTaskSpec:
    def test_out_dim(self):
        assert TaskSpec("graph_reg").out_dim == 1
        assert TaskSpec("node_class", n_classes=6).out_dim == 6

    def test_unknown_task(self):
        with pytest.raises(ConfigError):
            TaskSpec("link_pred")

    def test_unknown_readout(self):
        with pytest.raises(ConfigError):
            TaskSpec("graph_class", readout="sum")

    def test_too_few_classes(self):
        with pytest.raises(ConfigError):
            TaskSpec("graph_class", n_classes=1)


class TestCrossEntropy:
    def test_perfect_prediction_vanishes(self):
        labels = np.array([0, 2, 1])
        logits = np.zeros((3, 3))
        logits[np.arange(3), labels] = 100.0
        assert L.cross_entropy(logits, labels).item() < 1e-40

    def test_uniform_scores_give_log_c(self):
        loss = L.cross_entropy(np.zeros((5, 4)), np.array([0, 1, 2, 3, 0]))
        assert abs(loss.item() - np.log(4.0)) < 1e-12

    def test_matches_manual_log_softmax(self):
        rng = np.random.default_rng(0)
        z = rng.normal(size=(7, 5))
        y = rng.integers(0, 5, size=7)
        lse = np.log(np.exp(z).sum(axis=1))
        want = float(np.mean(lse - z[np.arange(7), y]))
        assert abs(L.cross_entropy(z, y).item() - want) < 1e-12

    def test_weighted_equals_unweighted_when_balanced(self):
        rng = np.random.default_rng(1)
        z = rng.normal(size=(6, 2))
        y = np.array([0, 1, 0, 1, 0, 1])
        a = L.cross_entropy(z, y).item()
        b = L.weighted_cross_entropy(z, y).item()
        assert abs(a - b) < 1e-12

    def test_weighted_manual_oracle(self):
        rng = np.random.default_rng(2)
        z = rng.normal(size=(9, 4))
        y = rng.integers(0, 3, size=9)  # class 3 absent on purpose
        lse = np.log(np.exp(z).sum(axis=1))
        per = lse - z[np.arange(9), y]
        counts = np.bincount(y, minlength=4)
        w = np.where(counts > 0, 9 / (4 * np.maximum(counts, 1)), 0.0)
        want = float((w[y] * per).sum() / 9)
        assert abs(L.weighted_cross_entropy(z, y).item() - want) < 1e-12

    def test_gradient(self):
        rng = np.random.default_rng(3)
        y = rng.integers(0, 3, size=6)
        check_gradients(lambda z: L.cross_entropy(z, y), [rng.normal(size=(6, 3))], tol=1e-6)

    def test_weighted_gradient(self):
        rng = np.random.default_rng(4)
        y = np.array([0, 0, 0, 1, 2, 2])
        check_gradients(
            lambda z: L.weighted_cross_entropy(z, y), [rng.normal(size=(6, 3))], tol=1e-6
        )

    def test_label_out_of_range(self):
        with pytest.raises(IndexError):
            L.cross_entropy(np.zeros((2, 3)), np.array([0, 3]))
        with pytest.raises(IndexError):
            L.cross_entropy(np.zeros((2, 3)), np.array([-1, 0]))

    def test_empty_batch(self):
        with pytest.raises(ValidationError):
            L.cross_entropy(np.zeros((0, 3)), np.array([], dtype=np.int64))

    def test_length_mismatch(self):
        with pytest.raises(DimensionError):
            L.cross_entropy(np.zeros((3, 2)), np.array([0, 1]))


class TestL1Loss:
    def test_example(self):
        assert L.l1_loss(np.array([1.5]), np.array([1.0])).item() == 0.5

    def test_mean_over_batch(self):
        loss = L.l1_loss(np.array([[1.0], [3.0]]), np.array([2.0, 1.0]))
        assert abs(loss.item() - 1.5) < 1e-15

    def test_gradient(self):
        rng = np.random.default_rng(5)
        target = rng.normal(size=4)
        check_gradients(
            lambda p: L.l1_loss(p, target), [rng.normal(size=(4, 1))], tol=1e-6
        )

    def test_empty(self):
        with pytest.raises(ValidationError):
            L.l1_loss(np.zeros((0, 1)), np.array([]))


class TestClassMetrics:
    def test_accuracy(self):
        assert M.accuracy([0, 1, 1, 0], [0, 1, 0, 0]) == 0.75

    def test_balanced_accuracy_mean_of_recalls(self):
        pred = np.array([0, 0, 0, 0, 1, 1])
        labels = np.array([0, 0, 0, 1, 1, 1])
        # recalls: class 0 -> 1.0, class 1 -> 2/3
        assert abs(M.balanced_accuracy(pred, labels) - 5 / 6) < 1e-12

    def test_balanced_accuracy_ignores_class_imbalance(self):
        rng = np.random.default_rng(6)
        labels = rng.integers(0, 3, size=60)
        pred = rng.integers(0, 3, size=60)
        # replicate every class-0 sample: per-class recalls are unchanged
        dup = labels == 0
        labels2 = np.concatenate([labels, labels[dup]])
        pred2 = np.concatenate([pred, pred[dup]])
        a = M.balanced_accuracy(pred, labels)
        b = M.balanced_accuracy(pred2, labels2)
        assert abs(a - b) < 1e-12
        assert abs(M.accuracy(pred, labels) - M.accuracy(pred2, labels2)) > 1e-3

    def test_balanced_accuracy_skips_absent_classes(self):
        assert M.balanced_accuracy([2, 0], [0, 0]) == 0.5

    def test_f1_worked_example(self):
        labels = np.array([1, 1, 1, 0, 0])
        pred = np.array([1, 1, 0, 1, 0])  # TP=2 FP=1 FN=1
        assert abs(M.f1_positive(pred, labels) - 2 / 3) < 1e-12

    def test_f1_no_true_positives(self):
        assert M.f1_positive([0, 0], [1, 1]) == 0.0

    def test_mae(self):
        assert M.mae([1.0, 3.0], [2.0, 1.0]) == 1.5

    def test_predict_classes_first_argmax(self):
        assert M.predict_classes(np.array([[0.5, 0.5], [0.1, 0.9]])).tolist() == [0, 1]

    def test_empty_inputs(self):
        with pytest.raises(ValidationError):
            M.accuracy([], [])
        with pytest.raises(DimensionError):
            M.accuracy([0, 1], [0])

    def test_report_validation(self):
        with pytest.raises(ValidationError):
            M.MetricReport("acc", float("nan"), 10)
        with pytest.raises(ValidationError):
            M.MetricReport("acc", 0.5, 0)
        assert M.MetricReport("acc", 0.5, 10).value == 0.5


class TestHitsAtK:
    def test_all_positives_on_top(self):
        assert M.hits_at_k([5.0, 6.0], [1.0, 2.0, 3.0], 1) == 1.0

    def test_all_positives_below(self):
        assert M.hits_at_k([0.0, 0.5], [1.0, 2.0, 3.0], 3) == 0.0

    def test_tie_with_kth_negative_misses(self):
        neg = [3.0, 2.0, 1.0]
        assert M.hits_at_k([2.0], neg, 2) == 0.0
        assert M.hits_at_k([2.0 + 1e-9], neg, 2) == 1.0

    def test_k_beyond_negatives_always_hits(self):
        assert M.hits_at_k([-100.0], [1.0, 2.0], 3) == 1.0

    def test_k_out_of_range(self):
        with pytest.raises(ValidationError):
            M.hits_at_k([1.0], [1.0, 2.0], 0)
        with pytest.raises(ValidationError):
            M.hits_at_k([1.0], [1.0, 2.0], 4)

    def test_empty_sets(self):
        with pytest.raises(ValidationError):
            M.hits_at_k([], [1.0], 1)
        with pytest.raises(ValidationError):
            M.hits_at_k([1.0], [], 1)

    def test_matches_rank_oracle(self):
        # integer-valued scores force plenty of ties
        rng = np.random.default_rng(7)
        for _ in range(1000):
            pos = rng.integers(0, 10, size=rng.integers(1, 20)).astype(float)
            neg = rng.integers(0, 10, size=rng.integers(1, 30)).astype(float)
            k = int(rng.integers(1, neg.size + 2))
            ranks = 1 + (neg[None, :] >= pos[:, None]).sum(axis=1)
            want = float((ranks <= k).mean())
            assert M.hits_at_k(pos, neg, k) == want


class TestMPHeads:
    def test_single_node_graph_head_equals_suffix(self):
        rng = np.random.default_rng(8)
        head = GraphHead(3, 2, rng)
        g = build_graph(1, [])
        h = rng.normal(size=(1, 3))
        got = head(T.as_tensor(h), g).data
        np.testing.assert_allclose(got, _mlp(head.mlp, h), atol=1e-12)

    def test_batch_pooling_matches_per_graph_means(self):
        rng = np.random.default_rng(9)
        graphs = [build_graph(n, [(0, 1), (1, 0)]) for n in (2, 3, 4)]
        batch = batch_graphs(graphs)
        h = rng.normal(size=(batch.n, 5))
        pooled = graph_mean_pool(T.as_tensor(h), batch).data
        want = np.stack([
            h[batch.node_to_graph == i].mean(axis=0) for i in range(3)
        ])
        np.testing.assert_allclose(pooled, want, atol=1e-12)

    def test_graph_head_permutation_invariant(self):
        rng = np.random.default_rng(10)
        head = GraphHead(4, 3, rng)
        g = build_graph(5, [(0, 1), (1, 0), (2, 3), (3, 2)])
        h = rng.normal(size=(5, 4))
        perm = rng.permutation(5)
        hp = np.empty_like(h)
        hp[perm] = h
        a = head(T.as_tensor(h), g).data
        b = head(T.as_tensor(hp), permute_nodes(g, perm)).data
        np.testing.assert_allclose(a, b, atol=1e-9)

    def test_node_head_is_rowwise(self):
        rng = np.random.default_rng(11)
        head = NodeHead(3, 4, rng)
        h = rng.normal(size=(6, 3))
        perm = rng.permutation(6)
        out = head(T.as_tensor(h)).data
        out_p = head(T.as_tensor(h[perm])).data
        np.testing.assert_allclose(out_p, out[perm], atol=1e-12)

    def test_edge_head_matches_manual(self):
        rng = np.random.default_rng(12)
        head = EdgeHead(3, 2, rng)
        g = build_graph(4, [(0, 1), (1, 2), (2, 0), (3, 1)])
        h = rng.normal(size=(4, 3))
        got = head(T.as_tensor(h), g).data
        want = _mlp(head.mlp, np.concatenate([h[g.src], h[g.dst]], axis=1))
        np.testing.assert_allclose(got, want, atol=1e-12)

    def test_edge_head_permutation_equivariant(self):
        rng = np.random.default_rng(13)
        head = EdgeHead(3, 2, rng)
        g = build_graph(5, [(0, 1), (1, 2), (2, 0), (3, 4), (4, 0)])
        h = rng.normal(size=(5, 3))
        perm = rng.permutation(5)
        hp = np.empty_like(h)
        hp[perm] = h
        gp = permute_nodes(g, perm)
        a = _arc_sorted(g, head(T.as_tensor(h), g).data, perm=perm)
        b = _arc_sorted(gp, head(T.as_tensor(hp), gp).data)
        np.testing.assert_allclose(a, b, atol=1e-9)

    def test_layerwise_head_sums_per_layer_maps(self):
        rng = np.random.default_rng(14)
        head = LayerwiseGraphHead(3, 2, n_layers=3, rng=rng)
        g = build_graph(4, [(0, 1), (1, 0)])
        states = [rng.normal(size=(4, 3)) for _ in range(3)]
        got = head([T.as_tensor(s) for s in states], g).data
        want = sum(
            _linear(lin, s.mean(axis=0, keepdims=True))
            for lin, s in zip(head.maps, states)
        )
        np.testing.assert_allclose(got, want, atol=1e-12)

    def test_layerwise_head_state_count_checked(self):
        rng = np.random.default_rng(15)
        head = LayerwiseGraphHead(3, 2, n_layers=2, rng=rng)
        g = build_graph(2, [(0, 1), (1, 0)])
        with pytest.raises(ConfigError):
            head([T.as_tensor(np.zeros((2, 3)))], g)

    @pytest.mark.parametrize("kind", ["graph", "node", "edge", "layerwise"])
    def test_gradients(self, kind):
        rng = np.random.default_rng(16)
        g = build_graph(4, [(0, 1), (1, 2), (2, 0), (3, 0)])
        if kind == "layerwise":
            head = LayerwiseGraphHead(3, 2, n_layers=2, rng=rng)
            states = [T.parameter(rng.normal(size=(4, 3))) for _ in range(2)]
            probe = rng.normal(size=(1, 2))
            loss_fn = lambda: T.reduce_sum(T.mul(head(states, g), probe))
            inputs = states
        else:
            head = {"graph": GraphHead, "node": NodeHead, "edge": EdgeHead}[kind](3, 2, rng)
            x = T.parameter(rng.normal(size=(4, 3)))
            rows = {"graph": 1, "node": 4, "edge": g.n_edges}[kind]
            probe = rng.normal(size=(rows, 2))
            loss_fn = lambda: T.reduce_sum(T.mul(head(x, g), probe))
            inputs = [x]
        module_grad_check(loss_fn, list(head.parameters()) + inputs, tol=1e-5)


class TestWLGraphHeads:
    def test_ringgnn_head_formula(self):
        rng = np.random.default_rng(17)
        head = RingGNNGraphHead([3, 3], 4, rng)
        states = [rng.normal(size=(5, 5, 3)) for _ in range(2)]
        feats = np.concatenate([s.sum(axis=(0, 1)) for s in states])[None, :]
        want = _linear(head.p, np.maximum(_linear(head.q, feats), 0.0))
        got = head([T.as_tensor(s) for s in states]).data
        np.testing.assert_allclose(got, want, atol=1e-12)

    def test_ringgnn_head_permutation_invariant(self):
        rng = np.random.default_rng(18)
        head = RingGNNGraphHead([2, 2], 3, rng)
        states = [rng.normal(size=(6, 6, 2)) for _ in range(2)]
        perm = rng.permutation(6)
        a = head([T.as_tensor(s) for s in states]).data
        b = head([T.as_tensor(_conj(s, perm)) for s in states]).data
        np.testing.assert_allclose(a, b, atol=1e-9)

    def test_threewl_constant_diag_offdiag_readout(self):
        # state with constant c on the diagonal and o elsewhere reads out
        # exactly concat(c, o) per layer
        rng = np.random.default_rng(19)
        head = ThreeWLGraphHead([2], 4, rng)
        head.maps[0].weight.data[:] = np.eye(4)
        head.maps[0].bias.data[:] = 0.0
        c, o = np.array([1.5, -2.0]), np.array([0.25, 3.0])
        state = np.tile(o, (5, 5, 1))
        state[np.arange(5), np.arange(5)] = c
        got = head([T.as_tensor(state)]).data
        np.testing.assert_allclose(got, np.concatenate([c, o])[None, :], atol=1e-12)

    def test_threewl_single_node_offdiag_is_zero(self):
        rng = np.random.default_rng(20)
        head = ThreeWLGraphHead([3], 6, rng)
        head.maps[0].weight.data[:] = np.eye(6)
        head.maps[0].bias.data[:] = 0.0
        state = rng.normal(size=(1, 1, 3))
        got = head([T.as_tensor(state)]).data
        np.testing.assert_allclose(got, np.concatenate([state[0, 0], np.zeros(3)])[None, :])

    def test_threewl_head_permutation_invariant(self):
        rng = np.random.default_rng(21)
        head = ThreeWLGraphHead([2, 3], 4, rng)
        states = [rng.normal(size=(6, 6, d)) for d in (2, 3)]
        perm = rng.permutation(6)
        a = head([T.as_tensor(s) for s in states]).data
        b = head([T.as_tensor(_conj(s, perm)) for s in states]).data
        np.testing.assert_allclose(a, b, atol=1e-9)

    def test_threewl_sums_over_layers(self):
        rng = np.random.default_rng(22)
        head = ThreeWLGraphHead([2, 2], 3, rng)
        states = [rng.normal(size=(4, 4, 2)) for _ in range(2)]
        want = np.zeros((1, 3))
        for s, lin in zip(states, head.maps):
            diag = s[np.arange(4), np.arange(4)].max(axis=0)
            off = s[~np.eye(4, dtype=bool)].max(axis=0)
            want += _linear(lin, np.concatenate([diag, off])[None, :])
        got = head([T.as_tensor(s) for s in states]).data
        np.testing.assert_allclose(got, want, atol=1e-12)

    @pytest.mark.parametrize("cls", [RingGNNGraphHead, ThreeWLGraphHead])
    def test_gradients(self, cls):
        rng = np.random.default_rng(23)
        head = cls([3, 3], 2, rng)
        states = [T.parameter(rng.normal(size=(4, 4, 3))) for _ in range(2)]
        probe = rng.normal(size=(1, 2))
        loss_fn = lambda: T.reduce_sum(T.mul(head(states), probe))
        module_grad_check(loss_fn, list(head.parameters()) + states, tol=1e-5)


class TestWLNodeEdgeHeads:
    def test_ringgnn_node_head_formula(self):
        rng = np.random.default_rng(24)
        head = RingGNNNodeHead([2, 2], 3, rng)
        states = [rng.normal(size=(5, 5, 2)) for _ in range(2)]
        feats = np.concatenate([s.sum(axis=1) for s in states], axis=1)
        want = _linear(head.p, np.maximum(_linear(head.q, feats), 0.0))
        got = head([T.as_tensor(s) for s in states]).data
        np.testing.assert_allclose(got, want, atol=1e-12)

    def test_threewl_node_head_formula(self):
        rng = np.random.default_rng(25)
        head = ThreeWLNodeHead([2, 3], 4, rng)
        states = [rng.normal(size=(5, 5, d)) for d in (2, 3)]
        want = sum(
            _linear(lin, s.sum(axis=1)) for lin, s in zip(head.maps, states)
        )
        got = head([T.as_tensor(s) for s in states]).data
        np.testing.assert_allclose(got, want, atol=1e-12)

    @pytest.mark.parametrize("cls", [RingGNNNodeHead, ThreeWLNodeHead])
    def test_node_head_permutation_equivariant(self, cls):
        rng = np.random.default_rng(26)
        head = cls([2, 2], 3, rng)
        states = [rng.normal(size=(6, 6, 2)) for _ in range(2)]
        perm = rng.permutation(6)
        a = head([T.as_tensor(s) for s in states]).data
        b = head([T.as_tensor(_conj(s, perm)) for s in states]).data
        np.testing.assert_allclose(b, a[perm], atol=1e-9)

    def test_edge_head_formula(self):
        rng = np.random.default_rng(27)
        head = WLEdgeHead([2, 2], 2, rng)
        g = build_graph(4, [(0, 1), (1, 2), (2, 3), (3, 0)])
        states = [rng.normal(size=(4, 4, 2)) for _ in range(2)]
        feats = np.concatenate([s.sum(axis=1) for s in states], axis=1)
        pair = np.concatenate([feats[g.src], feats[g.dst]], axis=1)
        want = _linear(head.p, np.maximum(_linear(head.q, pair), 0.0))
        got = head([T.as_tensor(s) for s in states], g).data
        np.testing.assert_allclose(got, want, atol=1e-12)

    def test_edge_head_permutation_equivariant(self):
        rng = np.random.default_rng(28)
        head = WLEdgeHead([2, 2], 3, rng)
        g = build_graph(5, [(0, 1), (1, 2), (2, 0), (3, 4), (4, 1)])
        states = [rng.normal(size=(5, 5, 2)) for _ in range(2)]
        perm = rng.permutation(5)
        gp = permute_nodes(g, perm)
        # conjugating with inverse(perm) relabels old node i to perm[i]
        inv = np.argsort(perm)
        a = _arc_sorted(g, head([T.as_tensor(s) for s in states], g).data, perm=perm)
        b = _arc_sorted(gp, head([T.as_tensor(_conj(s, inv)) for s in states], gp).data)
        np.testing.assert_allclose(a, b, atol=1e-9)

    def test_edge_head_gradients(self):
        rng = np.random.default_rng(29)
        head = WLEdgeHead([2, 2], 2, rng)
        g = build_graph(3, [(0, 1), (1, 2), (2, 0)])
        states = [T.parameter(rng.normal(size=(3, 3, 2))) for _ in range(2)]
        probe = rng.normal(size=(3, 2))
        loss_fn = lambda: T.reduce_sum(T.mul(head(states, g), probe))
        module_grad_check(loss_fn, list(head.parameters()) + states, tol=1e-5)
