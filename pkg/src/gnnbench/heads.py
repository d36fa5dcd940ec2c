"""Task heads mapping node/edge/dense states to prediction scores.

Sparse-model heads take the final node state (and the graph for pooling or
endpoint lookup). Layerwise heads take the list of per-layer states: summed
per-layer linear maps for the 1-WL readout, layer concatenation or summed
per-layer maps for the dense families, exactly one head call per forward.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .errors import ConfigError
from .nn import MLP, Linear, Module

TASKS = ("graph_class", "graph_reg", "node_class", "edge_class")
READOUTS = ("mean", "layerwise")


@dataclass(frozen=True)
class TaskSpec:
    task: str
    n_classes: int = 2
    readout: str = "mean"

    def __post_init__(self):
        if self.task not in TASKS:
            raise ConfigError(f"unknown task {self.task!r}, expected one of {TASKS}")
        if self.readout not in READOUTS:
            raise ConfigError(f"unknown readout {self.readout!r}")
        if self.task != "graph_reg" and self.n_classes < 2:
            raise ConfigError("classification needs at least 2 classes")

    @property
    def out_dim(self):
        return 1 if self.task == "graph_reg" else self.n_classes


def graph_mean_pool(h, g):
    """Average node states per graph: (n, d) -> (n_graphs, d)."""
    index = getattr(g, "graph_index", None)
    if index is not None:
        return T.segment_reduce(h, index, mode="mean")
    return T.reshape(T.reduce_mean(h, axis=0), (1, h.shape[1]))


class GraphHead(Module):
    """Mean pooling followed by the 3-linear-map suffix d -> d -> d -> out."""

    def __init__(self, d, out_dim, rng):
        self.mlp = MLP([d, d, d, out_dim], rng)

    def __call__(self, h, g):
        return self.mlp(graph_mean_pool(h, g))


class NodeHead(Module):
    def __init__(self, d, out_dim, rng):
        self.mlp = MLP([d, d, d, out_dim], rng)

    def __call__(self, h, g=None):
        return self.mlp(h)


class EdgeHead(Module):
    """Per-arc scores from the concatenated endpoint states."""

    def __init__(self, d, out_dim, rng):
        self.mlp = MLP([2 * d, d, d, out_dim], rng)

    def __call__(self, h, g):
        pair = T.concat([T.gather_rows(h, g.src_index), T.gather_rows(h, g.dst_index)])
        return self.mlp(pair)


class LayerwiseGraphHead(Module):
    """Sum of per-layer linear maps over per-layer mean pools (1-WL readout,
    including the embedded input as layer zero)."""

    def __init__(self, d, out_dim, n_layers, rng):
        self.maps = [Linear(d, out_dim, rng) for _ in range(n_layers)]

    def __call__(self, states, g):
        if len(states) != len(self.maps):
            raise ConfigError(
                f"layerwise head built for {len(self.maps)} states, got {len(states)}"
            )
        out = None
        for state, lin in zip(states, self.maps):
            term = lin(graph_mean_pool(state, g))
            out = term if out is None else T.add(out, term)
        return out


class LayerwiseNodeHead(Module):
    """Per-node variant of the layerwise readout: no pooling, same sum of
    per-layer linear maps."""

    def __init__(self, d, out_dim, n_layers, rng):
        self.maps = [Linear(d, out_dim, rng) for _ in range(n_layers)]

    def __call__(self, states, g=None):
        if len(states) != len(self.maps):
            raise ConfigError(
                f"layerwise head built for {len(self.maps)} states, got {len(states)}"
            )
        out = None
        for state, lin in zip(states, self.maps):
            term = lin(state)
            out = term if out is None else T.add(out, term)
        return out


def _check_states(states, n):
    if len(states) != n:
        raise ConfigError(f"head built for {n} layer states, got {len(states)}")


def _node_sums(states):
    """Row sums per layer: each (n, n, d) dense state -> (n, d)."""
    return [T.reduce_sum(h, axis=1) for h in states]


class RingGNNGraphHead(Module):
    """Concat over layers of the total-sum readout, then P ReLU(Q x)."""

    def __init__(self, dims, out_dim, rng):
        self.n_states = len(dims)
        d = dims[-1]
        self.q = Linear(sum(dims), d, rng)
        self.p = Linear(d, out_dim, rng)

    def __call__(self, states):
        _check_states(states, self.n_states)
        sums = [T.reshape(T.reduce_sum(h, axis=(0, 1)), (1, h.shape[2])) for h in states]
        feats = sums[0] if len(sums) == 1 else T.concat(sums)
        return self.p(T.relu(self.q(feats)))


class ThreeWLGraphHead(Module):
    """Per-layer concat(max diagonal, max off-diagonal) readouts, summed
    through per-layer linear maps."""

    def __init__(self, dims, out_dim, rng):
        self.maps = [Linear(2 * d, out_dim, rng) for d in dims]

    def __call__(self, states):
        _check_states(states, len(self.maps))
        out = None
        for h, lin in zip(states, self.maps):
            n, d = h.shape[0], h.shape[2]
            flat = T.reshape(h, (n * n, d))
            diag_ids = np.arange(n) * (n + 1)
            diag_max = T.reduce_max(T.gather_rows(flat, diag_ids), axis=0)
            if n > 1:
                cells = np.arange(n * n)
                off_ids = cells[cells % (n + 1) != 0]
                off_max = T.reduce_max(T.gather_rows(flat, off_ids), axis=0)
            else:
                off_max = T.as_tensor(np.zeros(d))
            feats = T.reshape(T.concat([diag_max, off_max]), (1, 2 * d))
            term = lin(feats)
            out = term if out is None else T.add(out, term)
        return out


class RingGNNNodeHead(Module):
    """Concat over layers of per-node row sums, then P ReLU(Q x)."""

    def __init__(self, dims, out_dim, rng):
        self.n_states = len(dims)
        d = dims[-1]
        self.q = Linear(sum(dims), d, rng)
        self.p = Linear(d, out_dim, rng)

    def __call__(self, states):
        _check_states(states, self.n_states)
        sums = _node_sums(states)
        feats = sums[0] if len(sums) == 1 else T.concat(sums)
        return self.p(T.relu(self.q(feats)))


class ThreeWLNodeHead(Module):
    """Per-layer row sums through per-layer linear maps, summed."""

    def __init__(self, dims, out_dim, rng):
        self.maps = [Linear(d, out_dim, rng) for d in dims]

    def __call__(self, states):
        _check_states(states, len(self.maps))
        out = None
        for h, lin in zip(_node_sums(states), self.maps):
            term = lin(h)
            out = term if out is None else T.add(out, term)
        return out


class WLEdgeHead(Module):
    """Both dense families: per-node layer-concat row sums, endpoint concat,
    then P ReLU(Q x) per arc."""

    def __init__(self, dims, out_dim, rng):
        self.n_states = len(dims)
        d = dims[-1]
        self.q = Linear(2 * sum(dims), d, rng)
        self.p = Linear(d, out_dim, rng)

    def __call__(self, states, g):
        _check_states(states, self.n_states)
        sums = _node_sums(states)
        feats = sums[0] if len(sums) == 1 else T.concat(sums)
        pair = T.concat([
            T.gather_rows(feats, g.src_index),
            T.gather_rows(feats, g.dst_index),
        ])
        return self.p(T.relu(self.q(pair)))
