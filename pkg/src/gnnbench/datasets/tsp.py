"""Planar tour corpora: binary arc labels mark the solver's tour.

Points are uniform in the unit square, the graph is a k-nearest-neighbor
sparsification with raw distances as arc features, and the reference tour
comes from exact bitmask DP up to 16 nodes, else nearest-neighbor plus
2-opt run to a local optimum.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import ConfigError, ValidationError
from ..graphs import KnnConfig, SparseGraph, knn_graph
from .bundle import DatasetBundle, graph_rng, ratio_split, split_rng

EXACT_LIMIT = 16


@dataclass(frozen=True)
class TspConfig:
    n_graphs: int = 100
    n_range: tuple = (20, 50)
    knn_k: int = 25
    split_ratio: tuple = (10, 1, 1)

    def __post_init__(self):
        lo, hi = self.n_range
        if lo < 4 or hi < lo:
            raise ConfigError(f"bad node count range {self.n_range}")
        if self.knn_k < 1:
            raise ConfigError("knn_k must be positive")


def _pairwise(points):
    diff = points[:, None, :] - points[None, :, :]
    return np.sqrt((diff * diff).sum(axis=-1))


def held_karp(dist):
    """Optimal tour by bitmask DP; quadratic-exponential, so small n only."""
    n = dist.shape[0]
    if n > EXACT_LIMIT:
        raise ValidationError(f"exact solver capped at {EXACT_LIMIT} nodes, got {n}")
    full = 1 << n
    cost = np.full((full, n), np.inf)
    parent = np.full((full, n), -1, dtype=np.int64)
    cost[1, 0] = 0.0
    for mask in range(1, full):
        if not mask & 1:
            continue
        for last in range(n):
            c = cost[mask, last]
            if not np.isfinite(c):
                continue
            for nxt in range(1, n):
                if mask >> nxt & 1:
                    continue
                m2 = mask | (1 << nxt)
                c2 = c + dist[last, nxt]
                if c2 < cost[m2, nxt]:
                    cost[m2, nxt] = c2
                    parent[m2, nxt] = last
    closing = cost[full - 1] + dist[:, 0]
    last = int(np.argmin(closing))
    tour, mask = [], full - 1
    while last >= 0:
        tour.append(last)
        last, mask = int(parent[mask, last]), mask ^ (1 << last)
    return np.array(tour[::-1], dtype=np.int64)


def nearest_neighbor_tour(dist):
    n = dist.shape[0]
    tour = [0]
    remaining = np.ones(n, dtype=bool)
    remaining[0] = False
    for _ in range(n - 1):
        row = np.where(remaining, dist[tour[-1]], np.inf)
        nxt = int(np.argmin(row))
        tour.append(nxt)
        remaining[nxt] = False
    return np.array(tour, dtype=np.int64)


def two_opt(dist, tour):
    """Reverse segments while any swap shortens the tour; local optimum."""
    tour = np.array(tour, dtype=np.int64)
    n = tour.size
    improved = True
    while improved:
        improved = False
        for i in range(n - 2):
            a, b = tour[i], tour[i + 1]
            # candidate far edges (c, d); skip the edge adjacent to (a, b)
            j_hi = n if i > 0 else n - 1
            js = np.arange(i + 2, j_hi)
            if js.size == 0:
                continue
            c = tour[js]
            d = tour[(js + 1) % n]
            gain = dist[a, b] + dist[c, d] - dist[a, c] - dist[b, d]
            best = int(np.argmax(gain))
            if gain[best] > 1e-12:
                j = int(js[best])
                tour[i + 1 : j + 1] = tour[i + 1 : j + 1][::-1]
                improved = True
    return tour


def tour_length(dist, tour):
    return float(dist[tour, np.roll(tour, -1)].sum())


def solve_tour(points):
    dist = _pairwise(points)
    if points.shape[0] <= EXACT_LIMIT:
        return held_karp(dist)
    return two_opt(dist, nearest_neighbor_tour(dist))


def tour_arc_labels(g, tour):
    """1 for arcs whose endpoint pair is adjacent on the tour."""
    on_tour = set()
    for a, b in zip(tour, np.roll(tour, -1)):
        on_tour.add((min(a, b), max(a, b)))
    lo = np.minimum(g.src, g.dst)
    hi = np.maximum(g.src, g.dst)
    return np.array([(a, b) in on_tour for a, b in zip(lo, hi)], dtype=np.int64)


def gen_tsp(cfg, seed=0):
    graphs = []
    for i in range(cfg.n_graphs):
        rng = graph_rng(seed, i)
        n = int(rng.integers(cfg.n_range[0], cfg.n_range[1] + 1))
        points = rng.random((n, 2))
        base = knn_graph(points, KnnConfig(k=min(cfg.knn_k, n - 1), weight_mode="distance"))
        tour = solve_tour(points)
        graphs.append(
            SparseGraph(
                base.n,
                np.stack([base.src, base.dst], axis=1),
                node_feat=base.node_feat,
                edge_feat=base.edge_feat,
                edge_labels=tour_arc_labels(base, tour),
                positions=base.positions,
            )
        )

    return DatasetBundle(
        name="tsp",
        task="edge_class",
        graphs=graphs,
        n_classes=2,
        splits=[ratio_split(cfg.n_graphs, cfg.split_ratio, split_rng(seed))],
        config=cfg.__dict__.copy(),
        seed=seed,
    )
