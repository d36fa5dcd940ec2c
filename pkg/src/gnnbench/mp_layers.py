"""Sparse message-passing layers: input embedding, seven layer families with
their anisotropy variants, and the shared residual/BN/GraphNorm wrapper.

Every layer maps ``(h, g, e) -> (h', e')`` where ``e`` is an optional E x d
edge-state tensor. Layers that don't maintain edge state pass ``e`` through
untouched, so stacks of mixed layers compose. All aggregation runs over each
node's in-neighborhood through the graph's cached scatter indices.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .errors import ConfigError, ValidationError
from .nn import BatchNorm, Embedding, Linear, Module, uniform_init
from .tensor import apply_op, parameter

LAYER_KINDS = ("mlp", "gcn", "graphsage", "gat", "monet", "gatedgcn", "gin")
VARIANTS = ("default", "isotropic", "edge_feat", "edge_repr")
GATE_EPS = 1e-6


@dataclass
class LayerSpec:
    """Configuration for one message-passing layer.

    ``heads`` applies to gat, ``kernels`` to monet, ``aggregator`` to
    graphsage's default variant. ``variant`` selects the anisotropy ablation
    family for gat / graphsage / gatedgcn.
    """

    kind: str
    d: int
    heads: int = 4
    kernels: int = 3
    variant: str = "default"
    aggregator: str = "maxpool"
    use_residual: bool = True
    use_bn: bool = True
    use_graphnorm: bool = False

    def __post_init__(self):
        if self.kind not in LAYER_KINDS:
            raise ConfigError(f"unknown layer kind {self.kind!r}, expected one of {LAYER_KINDS}")
        if self.variant not in VARIANTS:
            raise ConfigError(f"unknown variant {self.variant!r}, expected one of {VARIANTS}")
        if self.variant != "default" and self.kind not in ("gat", "graphsage", "gatedgcn"):
            raise ConfigError(f"variant {self.variant!r} is not defined for kind {self.kind!r}")
        if self.kind == "gat" and self.d % self.heads != 0:
            raise ConfigError(f"gat needs d divisible by heads, got d={self.d}, heads={self.heads}")
        if self.aggregator not in ("mean", "maxpool"):
            raise ConfigError(f"unknown graphsage aggregator {self.aggregator!r}")
        if self.d < 1:
            raise ConfigError("hidden dim d must be >= 1")


def graphnorm(h, g):
    """Scale each node's features by 1/sqrt(its graph's node count)."""
    sizes = getattr(g, "graph_sizes", None)
    if sizes is not None:
        per_node = sizes[g.node_to_graph]
    else:
        per_node = np.full(g.n, g.n)
    return T.mul(h, 1.0 / np.sqrt(per_node)[:, None])


def headwise_linear(x, w):
    """Independent linear map per head: (E,K,c) x (K,c,o) -> (E,K,o)."""
    x = T.as_tensor(x)
    w = T.as_tensor(w)
    out = np.einsum("ekc,kco->eko", x.data, w.data)

    def bw(g, needs):
        gx = np.einsum("eko,kco->ekc", g, w.data) if needs[0] else None
        gw = np.einsum("ekc,eko->kco", x.data, g) if needs[1] else None
        return gx, gw

    return apply_op("headwise_linear", out, (x, w), bw)


class InputEmbed(Module):
    """Project raw node/edge features (and optional positional encodings)
    to the hidden width.

    Categorical codes use a bias-free embedding table (one-hot times a
    matrix); continuous features use a linear map with bias. Positional
    encodings get their own linear map whose output is added to the node
    embedding.
    """

    def __init__(self, d, rng, node_vocab=None, node_dim=None,
                 d_e=None, edge_vocab=None, edge_dim=None, pe_dim=None):
        if (node_vocab is None) == (node_dim is None):
            raise ConfigError("specify exactly one of node_vocab / node_dim")
        self.d = d
        if node_vocab is not None:
            self.node_map = Embedding(node_vocab, d, rng)
        else:
            self.node_map = Linear(node_dim, d, rng)
        self.pe_map = Linear(pe_dim, d, rng) if pe_dim else None
        self.edge_map = None
        self.d_e = d_e
        if d_e is not None:
            if (edge_vocab is None) == (edge_dim is None):
                raise ConfigError("specify exactly one of edge_vocab / edge_dim")
            if edge_vocab is not None:
                self.edge_map = Embedding(edge_vocab, d_e, rng)
            else:
                self.edge_map = Linear(edge_dim, d_e, rng)

    def __call__(self, g, pe=None):
        feat = g.node_feat
        if feat is None:
            raise ValidationError("graph has no node features to embed")
        if isinstance(self.node_map, Embedding):
            h = self.node_map(feat.reshape(-1))
        else:
            h = self.node_map(T.as_tensor(feat.reshape(g.n, -1).astype(np.float64)))
        if self.pe_map is not None:
            if pe is None:
                raise ConfigError("model was built with a pe dimension but no pe was given")
            h = T.add(h, self.pe_map(T.as_tensor(pe)))
        e = None
        if self.edge_map is not None:
            efeat = g.edge_feat
            if efeat is None:
                raise ValidationError("graph has no edge features to embed")
            if isinstance(self.edge_map, Embedding):
                e = self.edge_map(efeat.reshape(-1))
            else:
                e = self.edge_map(T.as_tensor(efeat.reshape(g.n_edges, -1).astype(np.float64)))
        return h, e


class MPLayer(Module):
    """Shared wrapper: pre-activation -> GraphNorm -> BN -> activation ->
    residual, each stage gated by the layer spec flags."""

    def __init__(self, spec):
        self.spec = spec

    def _finish(self, pre, h_in, g, bn, activation):
        if self.spec.use_graphnorm:
            pre = graphnorm(pre, g)
        if bn is not None:
            pre = bn(pre)
        out = activation(pre)
        if self.spec.use_residual:
            out = T.add(h_in, out)
        return out


class MLPLayer(MPLayer):
    """Per-node update with no graph access."""

    def __init__(self, spec, rng):
        super().__init__(spec)
        self.lin = Linear(spec.d, spec.d, rng)
        self.bn = BatchNorm(spec.d) if spec.use_bn else None

    def __call__(self, h, g, e=None):
        return self._finish(self.lin(h), h, g, self.bn, T.relu), e


class GCNLayer(MPLayer):
    """Isotropic averaging over in-neighbors, then a linear map and ReLU."""

    def __init__(self, spec, rng):
        super().__init__(spec)
        self.lin = Linear(spec.d, spec.d, rng)
        self.bn = BatchNorm(spec.d) if spec.use_bn else None

    def __call__(self, h, g, e=None):
        msgs = T.gather_rows(h, g.src_index)
        agg = T.segment_reduce(msgs, g.dst_index, mode="mean")
        return self._finish(self.lin(agg), h, g, self.bn, T.relu), e


class GraphSageLayer(MPLayer):
    """Concat(self, aggregated neighbors) update.

    default: mean or max-pool aggregation, wrapper, then row-wise l2
    projection. isotropic: max-pool without the l2 step. edge_feat /
    edge_repr: max-pool over sigmoid-gated messages, gate logits from the
    endpoint sum (plus the carried edge state for edge_repr, which is itself
    updated residually).
    """

    def __init__(self, spec, rng):
        super().__init__(spec)
        d = spec.d
        self.update = Linear(2 * d, d, rng)
        self.pool = None
        if not (spec.variant == "default" and spec.aggregator == "mean"):
            self.pool = Linear(d, d, rng)
        self.gate_sum = None
        if spec.variant in ("edge_feat", "edge_repr"):
            self.gate_sum = Linear(d, d, rng)
        if spec.variant == "edge_repr":
            self.gate_edge = Linear(d, d, rng)
            self.bn_e = BatchNorm(d) if spec.use_bn else None
        self.bn = BatchNorm(d) if spec.use_bn else None

    def __call__(self, h, g, e=None):
        spec = self.spec
        h_src = T.gather_rows(h, g.src_index)
        e_out = e
        if spec.variant == "default" and spec.aggregator == "mean":
            agg = T.segment_reduce(h_src, g.dst_index, mode="mean")
        else:
            msgs = self.pool(h_src)
            if spec.variant in ("edge_feat", "edge_repr"):
                endpoint_sum = T.add(T.gather_rows(h, g.dst_index), h_src)
                logits = self.gate_sum(endpoint_sum)
                if spec.variant == "edge_repr":
                    if e is None:
                        raise ConfigError("graphsage edge_repr needs an edge-state tensor")
                    logits = T.add(logits, self.gate_edge(e))
                    bumped = T.relu(self.bn_e(logits)) if self.bn_e else T.relu(logits)
                    e_out = T.add(e, bumped) if spec.use_residual else bumped
                msgs = T.mul(T.sigmoid(logits), msgs)
            agg = T.segment_reduce(T.relu(msgs), g.dst_index, mode="max")
        pre = self.update(T.concat([h, agg]))
        out = self._finish(pre, h, g, self.bn, T.relu)
        if spec.variant == "default":
            out = T.l2_normalize_rows(out)
        return out, e_out


class GATLayer(MPLayer):
    """Multi-head attention over in-neighbors.

    default / edge_feat: attention logits from the projected endpoint pair;
    heads concatenated, ELU, BN + residual. isotropic drops attention and
    the residual (plain per-head sum). edge_repr adds a projected edge state
    to the attention input and maintains the edge state residually.
    """

    def __init__(self, spec, rng):
        super().__init__(spec)
        d, k = spec.d, spec.heads
        dk = d // k
        self.proj = Linear(d, d, rng, bias=False)
        if spec.variant != "isotropic":
            fan = (3 if spec.variant == "edge_repr" else 2) * dk
            self.attn_dst = parameter(uniform_init(rng, fan, (k, dk)))
            self.attn_src = parameter(uniform_init(rng, fan, (k, dk)))
        if spec.variant == "edge_repr":
            self.edge_proj = Linear(d, d, rng, bias=False)
            self.attn_edge = parameter(uniform_init(rng, 3 * dk, (k, dk)))
            self.edge_update = parameter(uniform_init(rng, 3 * dk, (k, 3 * dk, dk)))
            self.bn_e = BatchNorm(d) if spec.use_bn else None
        self.bn = BatchNorm(d) if spec.use_bn else None

    def __call__(self, h, g, e=None):
        spec = self.spec
        d, k = spec.d, spec.heads
        dk = d // k
        n_arcs = g.n_edges
        proj = self.proj(h)
        p_src = T.gather_rows(proj, g.src_index)

        if spec.variant == "isotropic":
            # no residual in this form, so the shared wrapper doesn't apply
            pre = T.segment_reduce(p_src, g.dst_index, mode="sum")
            if spec.use_graphnorm:
                pre = graphnorm(pre, g)
            if self.bn is not None:
                pre = self.bn(pre)
            return T.elu(pre), e

        p_dst = T.gather_rows(proj, g.dst_index)
        ps = T.reshape(p_src, (n_arcs, k, dk))
        pd = T.reshape(p_dst, (n_arcs, k, dk))
        score = T.add(
            T.reduce_sum(T.mul(pd, self.attn_dst), axis=2),
            T.reduce_sum(T.mul(ps, self.attn_src), axis=2),
        )
        e_out = e
        if spec.variant == "edge_repr":
            if e is None:
                raise ConfigError("gat edge_repr needs an edge-state tensor")
            ae = T.reshape(self.edge_proj(e), (n_arcs, k, dk))
            score = T.add(score, T.reduce_sum(T.mul(ae, self.attn_edge), axis=2))
            cat = T.concat([ae, pd, ps], axis=2)
            upd = T.reshape(headwise_linear(cat, self.edge_update), (n_arcs, d))
            upd = self.bn_e(upd) if self.bn_e else upd
            e_out = T.add(e, T.elu(upd)) if spec.use_residual else T.elu(upd)

        att = T.segment_softmax(T.leaky_relu(score), g.dst_index)
        weighted = T.mul(ps, T.reshape(att, (n_arcs, k, 1)))
        agg = T.segment_reduce(T.reshape(weighted, (n_arcs, d)), g.dst_index, mode="sum")
        out = self._finish(agg, h, g, self.bn, T.elu)
        return out, e_out


class MoNetLayer(MPLayer):
    """Gaussian-kernel mixture over degree-derived pseudo-coordinates."""

    def __init__(self, spec, rng):
        super().__init__(spec)
        d, k = spec.d, spec.kernels
        self.pseudo = Linear(2, 2, rng)
        self.kernel_proj = [Linear(d, d, rng, bias=False) for _ in range(k)]
        self.mu = [parameter(uniform_init(rng, 2, (2,))) for _ in range(k)]
        # diagonal inverse covariance, parameterized as exp(s) to stay positive
        self.inv_sigma_log = [parameter(np.zeros(2)) for _ in range(k)]
        self.bn = BatchNorm(d) if spec.use_bn else None

    def __call__(self, h, g, e=None):
        deg = 1.0 / np.sqrt(np.maximum(g.in_degrees, 1).astype(np.float64))
        u_raw = np.stack([deg[g.dst], deg[g.src]], axis=1)
        u = T.tanh(self.pseudo(T.as_tensor(u_raw)))
        h_src = T.gather_rows(h, g.src_index)
        total = None
        for proj, mu, s in zip(self.kernel_proj, self.mu, self.inv_sigma_log):
            diff = T.sub(u, mu)
            quad = T.reduce_sum(T.mul(T.mul(diff, diff), T.exp(s)), axis=1)
            w = T.exp(T.scalar_mul(quad, -0.5))
            msgs = T.mul(proj(h_src), T.reshape(w, (g.n_edges, 1)))
            agg = T.segment_reduce(msgs, g.dst_index, mode="sum")
            total = agg if total is None else T.add(total, agg)
        return self._finish(total, h, g, self.bn, T.relu), e


class GatedGCNLayer(MPLayer):
    """Edge-gated aggregation.

    default / edge_repr: the edge state is updated residually, then gates
    are sigmoid(state) normalized over each in-neighborhood. edge_feat
    recomputes gate logits from the endpoints only. isotropic drops gates
    for a plain sum.
    """

    def __init__(self, spec, rng):
        super().__init__(spec)
        d = spec.d
        self.u = Linear(d, d, rng)
        self.v = Linear(d, d, rng)
        if spec.variant != "isotropic":
            self.a = Linear(d, d, rng)
            self.b = Linear(d, d, rng)
        if spec.variant in ("default", "edge_repr"):
            self.c = Linear(d, d, rng)
            self.bn_e = BatchNorm(d) if spec.use_bn else None
        self.bn = BatchNorm(d) if spec.use_bn else None

    def __call__(self, h, g, e=None):
        spec = self.spec
        v_src = T.gather_rows(self.v(h), g.src_index)
        if spec.variant == "isotropic":
            agg = T.segment_reduce(v_src, g.dst_index, mode="sum")
            pre = T.add(self.u(h), agg)
            return self._finish(pre, h, g, self.bn, T.relu), e

        logits = T.add(
            T.gather_rows(self.a(h), g.dst_index),
            T.gather_rows(self.b(h), g.src_index),
        )
        e_out = e
        if spec.variant in ("default", "edge_repr"):
            if e is None:
                raise ConfigError(f"gatedgcn {spec.variant} needs an edge-state tensor")
            pre_e = T.add(logits, self.c(e))
            bumped = T.relu(self.bn_e(pre_e)) if self.bn_e else T.relu(pre_e)
            e_out = T.add(e, bumped) if spec.use_residual else bumped
            gate_in = e_out
        else:
            gate_in = logits
        sig = T.sigmoid(gate_in)
        denom = T.gather_rows(T.segment_reduce(sig, g.dst_index, mode="sum"), g.dst_index)
        gates = T.div(sig, T.add(denom, GATE_EPS))
        agg = T.segment_reduce(T.mul(gates, v_src), g.dst_index, mode="sum")
        pre = T.add(self.u(h), agg)
        return self._finish(pre, h, g, self.bn, T.relu), e_out


class GINLayer(MPLayer):
    """Sum aggregation with a learnable self-weight, then a 2-layer MLP
    whose first map is batch-normalized."""

    def __init__(self, spec, rng):
        super().__init__(spec)
        d = spec.d
        self.eps = parameter(np.zeros(()))
        self.lin_inner = Linear(d, d, rng)
        self.lin_outer = Linear(d, d, rng)
        self.bn_inner = BatchNorm(d) if spec.use_bn else None

    def __call__(self, h, g, e=None):
        agg = T.segment_reduce(T.gather_rows(h, g.src_index), g.dst_index, mode="sum")
        hhat = T.add(T.mul(h, T.add(self.eps, 1.0)), agg)
        inner = self.lin_inner(hhat)
        if self.spec.use_graphnorm:
            inner = graphnorm(inner, g)
        if self.bn_inner is not None:
            inner = self.bn_inner(inner)
        out = T.relu(self.lin_outer(T.relu(inner)))
        if self.spec.use_residual:
            out = T.add(h, out)
        return out, e


_LAYER_CLASSES = {
    "mlp": MLPLayer,
    "gcn": GCNLayer,
    "graphsage": GraphSageLayer,
    "gat": GATLayer,
    "monet": MoNetLayer,
    "gatedgcn": GatedGCNLayer,
    "gin": GINLayer,
}


def make_layer(spec, rng):
    return _LAYER_CLASSES[spec.kind](spec, rng)
