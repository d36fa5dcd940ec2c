"""Model assembly: input embedding, layer stack, task head, size budgets.

Two families share one calling convention ``model(g, pe=None) -> scores``:
sparse message-passing models operate on arc lists (and batch via block
diagonals), dense models lift one graph at a time to an ``(n, n, c)``
tensor. ``solve_budget`` picks the hidden width that lands a family close
to a parameter budget so comparisons stay size-matched.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .errors import ConfigError, ValidationError
from .graphs import GraphBatch, to_dense_tensor
from .heads import (
    EdgeHead,
    GraphHead,
    LayerwiseGraphHead,
    LayerwiseNodeHead,
    NodeHead,
    RingGNNGraphHead,
    RingGNNNodeHead,
    ThreeWLGraphHead,
    ThreeWLNodeHead,
    WLEdgeHead,
)
from .mp_layers import LAYER_KINDS, InputEmbed, LayerSpec, make_layer
from .nn import Linear, Module
from .wl_layers import RingGNNLayer, ThreeWLLayer

DENSE_KINDS = ("ringgnn", "threewl")
MODEL_KINDS = LAYER_KINDS + DENSE_KINDS

# (kind, variant) pairs whose layers refuse to run without an edge-state
# tensor; everything else passes e through untouched
_EDGE_STATE_KINDS = {
    ("gatedgcn", "default"),
    ("gatedgcn", "edge_repr"),
    ("gat", "edge_repr"),
    ("graphsage", "edge_repr"),
}


@dataclass(frozen=True)
class FeatureInfo:
    """Raw inputs a dataset provides: categorical codes (vocab) or a
    continuous feature matrix (dim) per node, optionally per edge."""

    node_vocab: int | None = None
    node_dim: int | None = None
    edge_vocab: int | None = None
    edge_dim: int | None = None

    def __post_init__(self):
        if (self.node_vocab is None) == (self.node_dim is None):
            raise ConfigError("specify exactly one of node_vocab / node_dim")
        if self.edge_vocab is not None and self.edge_dim is not None:
            raise ConfigError("specify at most one of edge_vocab / edge_dim")

    @property
    def has_edge_feat(self):
        return self.edge_vocab is not None or self.edge_dim is not None


@dataclass(frozen=True)
class ModelSpec:
    kind: str
    task: TaskSpec
    d: int = 64
    n_layers: int = 4
    variant: str = "default"
    heads: int = 4
    kernels: int = 3
    aggregator: str = "maxpool"
    use_bn: bool = True
    use_residual: bool = True
    use_graphnorm: bool = False
    pe_dim: int = 0

    def __post_init__(self):
        if self.kind not in MODEL_KINDS:
            raise ConfigError(f"unknown model kind {self.kind!r}, expected one of {MODEL_KINDS}")
        if self.d < 1:
            raise ConfigError("hidden width must be positive")
        if self.n_layers < 1:
            raise ConfigError("need at least one layer")
        if self.pe_dim < 0:
            raise ConfigError("pe_dim must be >= 0")

    def with_width(self, d):
        return dataclasses.replace(self, d=d)


def _effective_width(spec):
    # multi-head attention splits the width evenly across heads
    if spec.kind == "gat":
        width = (spec.d // spec.heads) * spec.heads
        if width < spec.heads:
            raise ConfigError("gat width must allow at least one unit per head")
        return width
    return spec.d


class MessagePassingModel(Module):
    """Embed raw features, run the layer stack, apply the task head.

    Keeps every intermediate node state so layerwise readouts can see the
    whole trajectory (embedding included).
    """

    def __init__(self, spec, features, rng):
        if spec.kind in DENSE_KINDS:
            raise ConfigError("dense kinds belong to DenseModel")
        self.spec = spec
        width = _effective_width(spec)
        needs_e = (spec.kind, spec.variant) in _EDGE_STATE_KINDS
        embed_edges = needs_e and features.has_edge_feat
        self.embed = InputEmbed(
            width,
            rng,
            node_vocab=features.node_vocab,
            node_dim=features.node_dim,
            d_e=width if embed_edges else None,
            edge_vocab=features.edge_vocab if embed_edges else None,
            edge_dim=features.edge_dim if embed_edges else None,
            pe_dim=spec.pe_dim or None,
        )
        # datasets without edge features still need an edge state for the
        # gated layers; lift a constant scalar per arc instead
        self.edge_init = Linear(1, width, rng) if needs_e and not embed_edges else None
        lspec = LayerSpec(
            kind=spec.kind,
            d=width,
            heads=spec.heads,
            kernels=spec.kernels,
            variant=spec.variant,
            aggregator=spec.aggregator,
            use_residual=spec.use_residual,
            use_bn=spec.use_bn,
            use_graphnorm=spec.use_graphnorm,
        )
        self.layers = [make_layer(lspec, rng) for _ in range(spec.n_layers)]
        task = spec.task
        out = task.out_dim
        self._layerwise = task.readout == "layerwise"
        if task.task in ("graph_class", "graph_reg"):
            if self._layerwise:
                self.head = LayerwiseGraphHead(width, out, spec.n_layers + 1, rng)
            else:
                self.head = GraphHead(width, out, rng)
        elif task.task == "node_class":
            if self._layerwise:
                self.head = LayerwiseNodeHead(width, out, spec.n_layers + 1, rng)
            else:
                self.head = NodeHead(width, out, rng)
        else:
            if self._layerwise:
                raise ConfigError("layerwise readout covers graph and node tasks only")
            self.head = EdgeHead(width, out, rng)

    def __call__(self, g, pe=None):
        h, e = self.embed(g, pe)
        if self.edge_init is not None:
            e = self.edge_init(T.as_tensor(np.ones((g.n_edges, 1))))
        states = [h]
        for layer in self.layers:
            h, e = layer(h, g, e)
            states.append(h)
        if self._layerwise:
            return self.head(states, g)
        return self.head(h, g)


class DenseModel(Module):
    """Embed node (and any edge) features, lift to a dense (n, n, c)
    tensor, run the equivariant stack, read out from every layer state."""

    def __init__(self, spec, features, rng):
        if spec.kind not in DENSE_KINDS:
            raise ConfigError("sparse kinds belong to MessagePassingModel")
        self.spec = spec
        d = spec.d
        self._embed_edges = features.has_edge_feat
        self.embed = InputEmbed(
            d,
            rng,
            node_vocab=features.node_vocab,
            node_dim=features.node_dim,
            d_e=d if self._embed_edges else None,
            edge_vocab=features.edge_vocab,
            edge_dim=features.edge_dim,
            pe_dim=spec.pe_dim or None,
        )
        c_in = 1 + d + (d if self._embed_edges else 0)
        self.layers = []
        dims = []
        for _ in range(spec.n_layers):
            if spec.kind == "ringgnn":
                layer = RingGNNLayer(c_in, d, rng)
                c_in = d
            else:
                layer = ThreeWLLayer(c_in, d, rng)
                c_in = layer.d_out
            self.layers.append(layer)
            dims.append(c_in)
        task = spec.task
        out = task.out_dim
        if task.task in ("graph_class", "graph_reg"):
            head_cls = RingGNNGraphHead if spec.kind == "ringgnn" else ThreeWLGraphHead
            self.head = head_cls(dims, out, rng)
        elif task.task == "node_class":
            head_cls = RingGNNNodeHead if spec.kind == "ringgnn" else ThreeWLNodeHead
            self.head = head_cls(dims, out, rng)
        else:
            self.head = WLEdgeHead(dims, out, rng)

    def __call__(self, g, pe=None):
        if isinstance(g, GraphBatch):
            raise ValidationError("dense models take one graph at a time")
        h, e = self.embed(g, pe)
        x = to_dense_tensor(g, h, e)
        states = []
        for layer in self.layers:
            x = layer(x)
            states.append(x)
        if self.spec.task.task == "edge_class":
            return self.head(states, g)
        return self.head(states)


def build_model(spec, features, rng):
    if spec.kind in DENSE_KINDS:
        return DenseModel(spec, features, rng)
    return MessagePassingModel(spec, features, rng)


def count_params(module):
    """Total trainable scalars."""
    return int(sum(p.data.size for p in module.parameters()))


def solve_budget(spec, features, budget, d_max=1024):
    """Find the hidden width whose parameter count lands near ``budget``.

    Counts grow monotonically with width, so binary-search the largest
    width staying under 1.1x the budget; accept it if it reaches 0.9x,
    otherwise take whichever adjacent width is closest to the budget.
    """
    if budget < 1:
        raise ConfigError("budget must be positive")

    def count_at(d):
        rng = np.random.default_rng(0)
        return count_params(build_model(spec.with_width(d), features, rng))

    d_min = spec.heads if spec.kind == "gat" else 1
    if count_at(d_min) > 1.1 * budget:
        raise ConfigError(f"budget {budget} too small for a {spec.kind} model")
    lo, hi = d_min, d_min
    while count_at(hi) <= 1.1 * budget:
        if hi >= d_max:
            break
        hi = min(2 * hi, d_max)
    if count_at(hi) <= 1.1 * budget:
        best = hi
    else:
        # invariant: count(lo) <= 1.1 * budget < count(hi)
        while hi - lo > 1:
            mid = (lo + hi) // 2
            if count_at(mid) <= 1.1 * budget:
                lo = mid
            else:
                hi = mid
        best = lo
    if count_at(best) >= 0.9 * budget:
        return best
    over = best + 1
    if count_at(over) - budget < budget - count_at(best):
        return over
    return best
