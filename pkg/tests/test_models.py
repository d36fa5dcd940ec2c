"""Assembled-model checks: shapes per task, invariances, determinism,
parameter counting, and budget solving."""

import dataclasses

import numpy as np
import pytest

from gnnbench import tensor as T
from gnnbench.errors import ConfigError, ValidationError
from gnnbench.graphs import SparseGraph, batch_graphs, permute_nodes
from gnnbench.heads import TaskSpec
from gnnbench.models import (
    DENSE_KINDS,
    MODEL_KINDS,
    DenseModel,
    FeatureInfo,
    MessagePassingModel,
    ModelSpec,
    build_model,
    count_params,
    solve_budget,
)
from gnnbench.nn import MLP, Linear

MP_KINDS = tuple(k for k in MODEL_KINDS if k not in DENSE_KINDS)


def _ring_graph(n, vocab=3, seed=0, edge_feat=False):
    rng = np.random.default_rng(seed)
    arcs = [(i, (i + 1) % n) for i in range(n)]
    arcs += [(v, u) for u, v in arcs]
    g = SparseGraph(
        n,
        np.array(arcs, dtype=np.int64),
        node_feat=rng.integers(0, vocab, size=n),
        edge_feat=rng.random(len(arcs)) if edge_feat else None,
    )
    return g


def _spec(kind, task="graph_class", **kw):
    return ModelSpec(kind=kind, task=TaskSpec(task, n_classes=3), **kw)


CODES = FeatureInfo(node_vocab=3)
CODES_EDGE = FeatureInfo(node_vocab=3, edge_dim=1)


class TestSpecs:
    def test_unknown_kind(self):
        with pytest.raises(ConfigError):
            _spec("transformer")

    def test_bad_width(self):
        with pytest.raises(ConfigError):
            _spec("gcn", d=0)

    def test_bad_layers(self):
        with pytest.raises(ConfigError):
            _spec("gcn", n_layers=0)

    def test_feature_info_requires_node_source(self):
        with pytest.raises(ConfigError):
            FeatureInfo()
        with pytest.raises(ConfigError):
            FeatureInfo(node_vocab=3, node_dim=2)

    def test_feature_info_edge_sources_exclusive(self):
        with pytest.raises(ConfigError):
            FeatureInfo(node_vocab=3, edge_vocab=2, edge_dim=1)

    def test_family_dispatch(self):
        rng = np.random.default_rng(0)
        assert isinstance(build_model(_spec("gcn"), CODES, rng), MessagePassingModel)
        assert isinstance(build_model(_spec("ringgnn"), CODES, rng), DenseModel)
        with pytest.raises(ConfigError):
            MessagePassingModel(_spec("ringgnn"), CODES, rng)
        with pytest.raises(ConfigError):
            DenseModel(_spec("gcn"), CODES, rng)


class TestForwardShapes:
    @pytest.mark.parametrize("kind", MP_KINDS)
    def test_graph_scores_single(self, kind):
        model = build_model(_spec(kind, d=8), CODES, np.random.default_rng(1))
        out = model(_ring_graph(6))
        assert out.shape == (1, 3)

    @pytest.mark.parametrize("kind", MP_KINDS)
    def test_graph_scores_batch(self, kind):
        model = build_model(_spec(kind, d=8), CODES, np.random.default_rng(1))
        gb = batch_graphs([_ring_graph(5, seed=0), _ring_graph(7, seed=1)])
        assert model(gb).shape == (2, 3)

    @pytest.mark.parametrize("kind", MP_KINDS)
    def test_node_scores(self, kind):
        model = build_model(_spec(kind, "node_class", d=8), CODES, np.random.default_rng(1))
        assert model(_ring_graph(6)).shape == (6, 3)

    @pytest.mark.parametrize("kind", MP_KINDS)
    def test_edge_scores(self, kind):
        model = build_model(_spec(kind, "edge_class", d=8), CODES, np.random.default_rng(1))
        g = _ring_graph(6)
        assert model(g).shape == (g.n_edges, 3)

    @pytest.mark.parametrize("kind", DENSE_KINDS)
    @pytest.mark.parametrize("task,rows", [("graph_class", 1), ("node_class", 5), ("edge_class", 10)])
    def test_dense_scores(self, kind, task, rows):
        model = build_model(_spec(kind, task, d=6, n_layers=2), CODES, np.random.default_rng(1))
        assert model(_ring_graph(5)).shape == (rows, 3)

    @pytest.mark.parametrize("kind", DENSE_KINDS)
    def test_dense_rejects_batches(self, kind):
        model = build_model(_spec(kind, d=6, n_layers=2), CODES, np.random.default_rng(1))
        gb = batch_graphs([_ring_graph(4), _ring_graph(5)])
        with pytest.raises(ValidationError):
            model(gb)

    def test_graph_regression_single_output(self):
        spec = ModelSpec(kind="gcn", task=TaskSpec("graph_reg"), d=8)
        model = build_model(spec, CODES, np.random.default_rng(1))
        assert model(_ring_graph(6)).shape == (1, 1)

    def test_continuous_node_features(self):
        info = FeatureInfo(node_dim=2)
        model = build_model(_spec("gcn", d=8), info, np.random.default_rng(1))
        g = _ring_graph(6)
        g = SparseGraph(g.n, np.stack([g.src, g.dst], axis=1),
                        node_feat=np.random.default_rng(0).random((6, 2)))
        assert model(g).shape == (1, 3)


class TestEdgeState:
    def test_gated_layers_get_synthesized_edge_state(self):
        # no edge features in the data, but the layer demands an edge state
        model = build_model(_spec("gatedgcn", "node_class", d=8), CODES,
                            np.random.default_rng(1))
        assert model.edge_init is not None
        assert model(_ring_graph(6)).shape == (6, 3)

    def test_edge_features_feed_the_edge_state(self):
        model = build_model(_spec("gatedgcn", "edge_class", d=8), CODES_EDGE,
                            np.random.default_rng(1))
        assert model.edge_init is None
        g = _ring_graph(6, edge_feat=True)
        assert model(g).shape == (g.n_edges, 3)
        # the scores must actually depend on the edge features
        g2 = SparseGraph(g.n, np.stack([g.src, g.dst], axis=1),
                         node_feat=g.node_feat, edge_feat=g.edge_feat + 1.0)
        assert not np.allclose(model(g).data, model(g2).data)

    @pytest.mark.parametrize("kind", ["gat", "graphsage"])
    def test_edge_repr_variants_run_without_edge_features(self, kind):
        model = build_model(_spec(kind, "node_class", d=8, variant="edge_repr"),
                            CODES, np.random.default_rng(1))
        assert model.edge_init is not None
        assert model(_ring_graph(6)).shape == (6, 3)

    def test_plain_layers_skip_the_edge_machinery(self):
        model = build_model(_spec("gcn", d=8), CODES, np.random.default_rng(1))
        assert model.edge_init is None


class TestReadouts:
    def test_layerwise_head_sees_every_state(self):
        spec = ModelSpec(kind="gin", task=TaskSpec("graph_class", 3, readout="layerwise"),
                         d=8, n_layers=4)
        model = build_model(spec, CODES, np.random.default_rng(1))
        assert len(model.head.maps) == 5  # embedding plus one per layer
        assert model(_ring_graph(6)).shape == (1, 3)

    def test_layerwise_node_readout(self):
        spec = ModelSpec(kind="gin", task=TaskSpec("node_class", 3, readout="layerwise"),
                         d=8, n_layers=3)
        model = build_model(spec, CODES, np.random.default_rng(1))
        assert model(_ring_graph(6)).shape == (6, 3)

    def test_layerwise_edge_readout_rejected(self):
        spec = ModelSpec(kind="gin", task=TaskSpec("edge_class", 3, readout="layerwise"), d=8)
        with pytest.raises(ConfigError):
            build_model(spec, CODES, np.random.default_rng(1))


class TestInvariance:
    @pytest.mark.parametrize("kind", MP_KINDS + DENSE_KINDS)
    def test_graph_scores_ignore_node_order(self, kind):
        model = build_model(_spec(kind, d=8, n_layers=2), CODES, np.random.default_rng(3))
        g = _ring_graph(7, seed=5)
        perm = np.random.default_rng(9).permutation(7)
        a = model(g).data
        b = model(permute_nodes(g, perm)).data
        assert np.allclose(a, b, atol=1e-8)

    @pytest.mark.parametrize("kind", ["gcn", "gatedgcn", "ringgnn"])
    def test_node_scores_follow_the_relabeling(self, kind):
        model = build_model(_spec(kind, "node_class", d=8, n_layers=2), CODES,
                            np.random.default_rng(3))
        g = _ring_graph(7, seed=5)
        perm = np.random.default_rng(9).permutation(7)
        a = model(g).data
        b = model(permute_nodes(g, perm)).data
        assert np.allclose(b[perm], a, atol=1e-8)


class TestPositionalInput:
    def test_pe_changes_the_output(self):
        spec = _spec("gcn", d=8, pe_dim=4)
        model = build_model(spec, CODES, np.random.default_rng(1))
        g = _ring_graph(6)
        pe = np.random.default_rng(2).random((6, 4))
        assert model(g, pe).shape == (1, 3)
        assert not np.allclose(model(g, pe).data, model(g, np.zeros((6, 4))).data)

    def test_missing_pe_raises(self):
        model = build_model(_spec("gcn", d=8, pe_dim=4), CODES, np.random.default_rng(1))
        with pytest.raises(ConfigError):
            model(_ring_graph(6))


class TestDeterminism:
    @pytest.mark.parametrize("kind", ["gcn", "gat", "gatedgcn", "ringgnn", "threewl"])
    def test_same_seed_same_scores(self, kind):
        g = _ring_graph(6)
        outs = []
        for _ in range(2):
            model = build_model(_spec(kind, d=8, n_layers=2), CODES, np.random.default_rng(42))
            outs.append(model(g).data)
        assert np.array_equal(outs[0], outs[1])


class TestParamCounts:
    def test_linear_count(self):
        assert count_params(Linear(3, 4, np.random.default_rng(0))) == 16

    def test_mlp_count_is_additive(self):
        mlp = MLP([5, 7, 2], np.random.default_rng(0))
        assert count_params(mlp) == (5 * 7 + 7) + (7 * 2 + 2)

    def test_hand_counted_model(self):
        # node_dim=3 embed: 3*5+5; two plain mlp layers: 2*(5*5+5);
        # graph head mlp [5,5,5,4]: 30+30+24
        spec = ModelSpec(kind="mlp", task=TaskSpec("graph_class", 4), d=5,
                         n_layers=2, use_bn=False)
        model = build_model(spec, FeatureInfo(node_dim=3), np.random.default_rng(0))
        assert count_params(model) == 20 + 60 + 84

    def test_batchnorm_adds_two_per_unit(self):
        base = ModelSpec(kind="mlp", task=TaskSpec("graph_class", 4), d=5,
                         n_layers=2, use_bn=False)
        with_bn = dataclasses.replace(base, use_bn=True)
        rng = np.random.default_rng(0)
        d0 = count_params(build_model(base, FeatureInfo(node_dim=3), rng))
        d1 = count_params(build_model(with_bn, FeatureInfo(node_dim=3), rng))
        assert d1 - d0 == 2 * (2 * 5)

    def test_counts_grow_with_width(self):
        for kind in MODEL_KINDS:
            rng = np.random.default_rng(0)
            counts = [count_params(build_model(_spec(kind, d=d, n_layers=2), CODES, rng))
                      for d in (8, 16, 32)]
            assert counts[0] < counts[1] < counts[2], kind


class TestBudget:
    @pytest.mark.parametrize("kind", MODEL_KINDS)
    def test_solved_width_lands_within_ten_percent(self, kind):
        budget = 100_000
        spec = _spec(kind, n_layers=4)
        d = solve_budget(spec, CODES, budget)
        got = count_params(build_model(spec.with_width(d), CODES, np.random.default_rng(0)))
        assert 0.9 * budget <= got <= 1.1 * budget, (kind, d, got)

    def test_gat_width_respects_heads(self):
        spec = _spec("gat", n_layers=4, heads=8)
        d = solve_budget(spec, CODES, 100_000)
        model = build_model(spec.with_width(d), CODES, np.random.default_rng(0))
        assert model(_ring_graph(6)).shape == (1, 3)

    def test_impossible_budget(self):
        with pytest.raises(ConfigError):
            solve_budget(_spec("gatedgcn", n_layers=4), CODES, 10)

    def test_budget_deterministic(self):
        spec = _spec("gcn", n_layers=4)
        assert solve_budget(spec, CODES, 50_000) == solve_budget(spec, CODES, 50_000)
