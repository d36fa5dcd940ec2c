"""Sparse graph storage, block-diagonal batching, and dense-tensor conversion.

Graphs are directed multigraph-free arc lists with CSR lookups in both
directions. Undirected graphs are stored as both arcs, so arc counts match the
doubled-edge convention used throughout. Instances are immutable after
construction; the cached scatter indices they expose are what make the sparse
message-passing layers fast.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .errors import DimensionError, ValidationError
from .tensor import ScatterIndex, Tensor, apply_op


class SparseGraph:
    """A directed graph with optional features, labels, and 2-D positions.

    ``node_feat`` is either an int vector of categorical codes or a float
    (n x a) matrix; ``edge_feat`` likewise per arc. Labels are plain numpy
    arrays (or an int for ``graph_label``) and never participate in autodiff.
    """

    def __init__(
        self,
        n,
        edges,
        node_feat=None,
        edge_feat=None,
        node_labels=None,
        edge_labels=None,
        graph_label=None,
        positions=None,
    ):
        self.n = int(n)
        edges = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
        self.src = np.ascontiguousarray(edges[:, 0])
        self.dst = np.ascontiguousarray(edges[:, 1])
        if edges.size:
            if edges.min() < 0 or edges.max() >= self.n:
                raise IndexError(f"edge endpoint outside [0, {self.n})")
            keys = self.src * self.n + self.dst
            if np.unique(keys).size != keys.size:
                raise ValidationError("duplicate arcs are not allowed")
        self.node_feat = _as_feat(node_feat)
        self.edge_feat = _as_feat(edge_feat)
        if self.edge_feat is not None and len(self.edge_feat) != self.n_edges:
            raise ValidationError(
                f"edge_feat has {len(self.edge_feat)} rows for {self.n_edges} arcs"
            )
        self.node_labels = None if node_labels is None else np.asarray(node_labels)
        self.edge_labels = None if edge_labels is None else np.asarray(edge_labels)
        self.graph_label = None if graph_label is None else int(graph_label)
        self.positions = None if positions is None else np.asarray(positions, dtype=np.float64)
        self._cache = {}

    @property
    def n_edges(self):
        return self.src.size

    def _cached(self, key, build):
        if key not in self._cache:
            self._cache[key] = build()
        return self._cache[key]

    # CSR by destination: in-neighborhood lookups
    @property
    def in_offsets(self):
        return self._cached("in_offsets", lambda: _offsets(self.dst, self.n))

    @property
    def in_order(self):
        return self._cached("in_order", lambda: np.argsort(self.dst, kind="stable"))

    @property
    def out_offsets(self):
        return self._cached("out_offsets", lambda: _offsets(self.src, self.n))

    @property
    def out_order(self):
        return self._cached("out_order", lambda: np.argsort(self.src, kind="stable"))

    def in_neighbors(self, i):
        lo, hi = self.in_offsets[i], self.in_offsets[i + 1]
        return self.src[self.in_order[lo:hi]]

    def out_neighbors(self, i):
        lo, hi = self.out_offsets[i], self.out_offsets[i + 1]
        return self.dst[self.out_order[lo:hi]]

    @property
    def in_degrees(self):
        return self._cached("in_degrees", lambda: np.bincount(self.dst, minlength=self.n))

    @property
    def out_degrees(self):
        return self._cached("out_degrees", lambda: np.bincount(self.src, minlength=self.n))

    # scatter indices shared by the message-passing layers
    @property
    def dst_index(self):
        """Arc -> destination node (aggregating incoming messages)."""
        return self._cached("dst_index", lambda: ScatterIndex(self.dst, self.n))

    @property
    def src_index(self):
        """Arc -> source node (gathering sender states)."""
        return self._cached("src_index", lambda: ScatterIndex(self.src, self.n))

    def structural_key(self):
        """Arc set as a sorted array; equal keys mean equal structure."""
        return np.sort(self.src * self.n + self.dst)

    def __repr__(self):
        return f"{type(self).__name__}(n={self.n}, arcs={self.n_edges})"


def _as_feat(feat):
    if feat is None:
        return None
    feat = np.asarray(feat)
    if np.issubdtype(feat.dtype, np.integer):
        return feat.astype(np.int64)
    return feat.astype(np.float64)


def _offsets(ids, n):
    counts = np.bincount(ids, minlength=n)
    out = np.zeros(n + 1, dtype=np.int64)
    np.cumsum(counts, out=out[1:])
    return out


def build_graph(n, edge_list, **features):
    """Validating constructor; see SparseGraph for the keyword fields."""
    return SparseGraph(n, edge_list, **features)


class GraphBatch(SparseGraph):
    """Block-diagonal union of graphs; node/arc ids are offset per graph."""

    def __init__(self, graphs):
        if not graphs:
            raise ValidationError("cannot batch zero graphs")
        _check_same_feat(graphs, "node_feat")
        _check_same_feat(graphs, "edge_feat")
        node_offsets = np.zeros(len(graphs) + 1, dtype=np.int64)
        np.cumsum([g.n for g in graphs], out=node_offsets[1:])
        edge_offsets = np.zeros(len(graphs) + 1, dtype=np.int64)
        np.cumsum([g.n_edges for g in graphs], out=edge_offsets[1:])
        edges = np.concatenate(
            [np.stack([g.src + o, g.dst + o], axis=1) for g, o in zip(graphs, node_offsets)]
        ) if edge_offsets[-1] else np.zeros((0, 2), dtype=np.int64)

        super().__init__(
            n=int(node_offsets[-1]),
            edges=edges,
            node_feat=_cat([g.node_feat for g in graphs]),
            edge_feat=_cat([g.edge_feat for g in graphs]),
            node_labels=_cat([g.node_labels for g in graphs]),
            edge_labels=_cat([g.edge_labels for g in graphs]),
            positions=_cat([g.positions for g in graphs]),
        )
        self.graphs = list(graphs)
        self.graph_offsets = node_offsets
        self.edge_offsets = edge_offsets
        self.node_to_graph = np.repeat(np.arange(len(graphs)), [g.n for g in graphs])
        self.graph_labels = (
            np.array([g.graph_label for g in graphs])
            if all(g.graph_label is not None for g in graphs)
            else None
        )

    @property
    def n_graphs(self):
        return len(self.graphs)

    @property
    def graph_index(self):
        """Node -> graph id, for per-graph pooling."""
        return self._cached("graph_index", lambda: ScatterIndex(self.node_to_graph, self.n_graphs))

    @property
    def graph_sizes(self):
        return np.diff(self.graph_offsets)

    def unbatch(self):
        return list(self.graphs)


def _check_same_feat(graphs, attr):
    shapes = set()
    for g in graphs:
        feat = getattr(g, attr)
        if feat is None:
            shapes.add(None)
        else:
            shapes.add((feat.dtype.kind, feat.shape[1:] if feat.ndim > 1 else ()))
    if len(shapes) > 1:
        raise ValidationError(f"graphs disagree on {attr}: {shapes}")


def _cat(items):
    present = [x for x in items if x is not None]
    if not present:
        return None
    if len(present) != len(items):
        raise ValidationError("some graphs are missing a field others have")
    return np.concatenate(present, axis=0)


def batch_graphs(graphs):
    return GraphBatch(graphs)


def permute_nodes(g, perm):
    """Relabel nodes so that old node i becomes perm[i]."""
    perm = np.asarray(perm, dtype=np.int64)
    if perm.shape != (g.n,) or np.bincount(perm, minlength=g.n).max(initial=1) != 1:
        raise ValidationError("perm must be a bijection on [0, n)")
    inverse = np.empty_like(perm)
    inverse[perm] = np.arange(g.n)

    def reorder(feat):
        return None if feat is None else feat[inverse]

    edges = np.stack([perm[g.src], perm[g.dst]], axis=1) if g.n_edges else np.zeros((0, 2), np.int64)
    return SparseGraph(
        g.n,
        edges,
        node_feat=reorder(g.node_feat),
        edge_feat=g.edge_feat,
        node_labels=reorder(g.node_labels),
        edge_labels=g.edge_labels,
        graph_label=g.graph_label,
        positions=reorder(g.positions),
    )


@dataclass(frozen=True)
class KnnConfig:
    """k-nearest-neighbor graph settings.

    ``sigma_mode`` fixes the Gaussian bandwidth; the only supported rule is
    each node's mean distance to its k nearest neighbors. ``weight_mode``
    picks the stored arc feature: the Gaussian kernel value or the raw
    Euclidean distance.
    """

    k: int
    sigma_mode: str = "mean_knn"
    weight_mode: str = "gaussian"


def knn_graph(points, cfg):
    """Directed k-nearest-neighbor graph over 2-D points.

    Each node links to its k nearest others (ties broken by smaller index).
    ``gaussian`` arc weights are exp(-dist^2 / sigma_i^2) with sigma_i the mean
    distance to i's k nearest neighbors; ``distance`` stores the raw distance.
    """
    if isinstance(cfg, int):
        cfg = KnnConfig(k=cfg)
    if cfg.sigma_mode != "mean_knn":
        raise ValidationError(f"unknown sigma_mode {cfg.sigma_mode!r}")
    k, weight_mode = cfg.k, cfg.weight_mode
    points = np.asarray(points, dtype=np.float64)
    n = points.shape[0]
    if k < 1 or k >= n:
        raise ValidationError(f"need 1 <= k < n, got k={k}, n={n}")
    diff = points[:, None, :] - points[None, :, :]
    dist = np.sqrt((diff * diff).sum(axis=-1))
    np.fill_diagonal(dist, np.inf)
    # stable argsort breaks distance ties by smaller node index
    order = np.argsort(dist, axis=1, kind="stable")[:, :k]
    src = np.repeat(np.arange(n), k)
    dst = order.reshape(-1)
    d_near = dist[src, dst]
    if weight_mode == "gaussian":
        sigma = d_near.reshape(n, k).mean(axis=1)
        denom = np.maximum(sigma[src] ** 2, 1e-300)
        weights = np.exp(-(d_near**2) / denom)
    elif weight_mode == "distance":
        weights = d_near
    else:
        raise ValidationError(f"unknown weight_mode {weight_mode!r}")
    return SparseGraph(
        n,
        np.stack([src, dst], axis=1),
        node_feat=points.copy(),
        edge_feat=weights[:, None],
        positions=points.copy(),
    )


def to_dense_tensor(g, node_state, edge_state=None):
    """Pack a graph into the (n, n, 1 + d + d_e) layout dense models consume.

    Channel 0 is the adjacency indicator; channels 1..d hold ``node_state``
    on the diagonal (zero elsewhere); the remaining channels hold
    ``edge_state`` at each arc's (src, dst) cell. Differentiable in both
    feature arguments.
    """
    node_state = T.as_tensor(node_state)
    if node_state.ndim != 2 or node_state.shape[0] != g.n:
        raise DimensionError(f"node_state must be n x d, got {node_state.shape}")
    d = node_state.shape[1]
    d_e = 0
    if edge_state is not None:
        edge_state = T.as_tensor(edge_state)
        if edge_state.ndim != 2 or edge_state.shape[0] != g.n_edges:
            raise DimensionError(f"edge_state must be E x d_e, got {edge_state.shape}")
        d_e = edge_state.shape[1]

    n = g.n
    out = np.zeros((n, n, 1 + d + d_e))
    out[g.src, g.dst, 0] = 1.0
    diag = np.arange(n)
    out[diag, diag, 1 : 1 + d] = node_state.data
    inputs = (node_state,)
    if d_e:
        out[g.src, g.dst, 1 + d :] = edge_state.data
        inputs = (node_state, edge_state)

    def bw(grad, needs):
        g_node = grad[diag, diag, 1 : 1 + d] if needs[0] else None
        if d_e and needs[1]:
            g_edge = grad[g.src, g.dst, 1 + d :]
            return g_node, g_edge
        if d_e:
            return g_node, None
        return (g_node,)

    return apply_op("to_dense_tensor", out, inputs, bw)
