"""Stochastic-block-model node classification corpora.

Two tasks: spotting a planted 20-node pattern inside a noisy community
graph, and recovering community membership from one revealed node per
community. Graph content depends only on (seed, graph index), so corpora
are reproducible regardless of generation order.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import ConfigError
from ..graphs import build_graph
from .bundle import DatasetBundle, corpus_rng, graph_rng, ratio_split, split_rng


def _check_sbm(p, q, size_range):
    if not 0.0 <= q <= p <= 1.0:
        raise ConfigError(f"need 0 <= q <= p <= 1, got p={p}, q={q}")
    lo, hi = size_range
    if not 1 <= lo <= hi:
        raise ConfigError(f"bad community size range {size_range}")


@dataclass(frozen=True)
class SbmPatternConfig:
    n_graphs: int = 100
    communities: int = 5
    size_range: tuple = (5, 35)
    p: float = 0.5
    q: float = 0.35
    vocab: int = 3
    pattern_nodes: int = 20
    p_pattern: float = 0.5
    q_pattern: float = 0.5
    n_patterns: int = 100
    total_range: tuple = (44, 188)
    split_ratio: tuple = (5, 1, 1)

    def __post_init__(self):
        _check_sbm(self.p, self.q, self.size_range)
        if self.n_graphs < 1 or self.n_patterns < 1 or self.pattern_nodes < 1:
            raise ConfigError("counts must be positive")


@dataclass(frozen=True)
class SbmClusterConfig:
    n_graphs: int = 100
    communities: int = 6
    size_range: tuple = (5, 35)
    p: float = 0.55
    q: float = 0.25
    total_range: tuple = (40, 190)
    split_ratio: tuple = (10, 1, 1)

    def __post_init__(self):
        _check_sbm(self.p, self.q, self.size_range)
        if self.n_graphs < 1:
            raise ConfigError("counts must be positive")

    @property
    def vocab(self):
        # code 0 = unknown, codes 1..communities reveal the class
        return self.communities + 1


def sbm_edges(communities, p, q, rng):
    """Sample undirected SBM pairs: intra-community prob p, inter prob q."""
    communities = np.asarray(communities, dtype=np.int64)
    iu, ju = np.triu_indices(communities.size, k=1)
    prob = np.where(communities[iu] == communities[ju], p, q)
    keep = rng.random(iu.size) < prob
    return np.stack([iu[keep], ju[keep]], axis=1)


def _community_sizes(cfg, extra, rng):
    """Per-community sizes, resampled until the graph total lands in range."""
    lo, hi = cfg.size_range
    t_lo, t_hi = cfg.total_range
    while True:
        sizes = rng.integers(lo, hi + 1, size=cfg.communities)
        if t_lo <= sizes.sum() + extra <= t_hi:
            return sizes


def _both_directions(pairs):
    if len(pairs) == 0:
        return np.zeros((0, 2), dtype=np.int64)
    return np.concatenate([pairs, pairs[:, ::-1]])


def _random_pattern(cfg, rng):
    iu, ju = np.triu_indices(cfg.pattern_nodes, k=1)
    keep = rng.random(iu.size) < cfg.p_pattern
    pairs = np.stack([iu[keep], ju[keep]], axis=1)
    feats = rng.integers(0, cfg.vocab, size=cfg.pattern_nodes)
    return pairs, feats


def gen_pattern(cfg, seed=0):
    """Planted-pattern corpus: binary node labels mark the pattern's nodes."""
    bank_rng = corpus_rng(seed)
    pattern_bank = [_random_pattern(cfg, bank_rng) for _ in range(cfg.n_patterns)]

    graphs = []
    for i in range(cfg.n_graphs):
        rng = graph_rng(seed, i)
        sizes = _community_sizes(cfg, cfg.pattern_nodes, rng)
        base = int(sizes.sum())
        communities = np.repeat(np.arange(cfg.communities), sizes)
        pairs = sbm_edges(communities, cfg.p, cfg.q, rng)
        feats = rng.integers(0, cfg.vocab, size=base)

        p_pairs, p_feats = pattern_bank[rng.integers(cfg.n_patterns)]
        attach = rng.random(cfg.pattern_nodes) < cfg.q_pattern
        anchors = rng.integers(0, base, size=cfg.pattern_nodes)
        links = np.stack([base + np.nonzero(attach)[0], anchors[attach]], axis=1)
        parts = [x for x in (pairs, p_pairs + base, links) if len(x)]
        pairs = np.concatenate(parts) if parts else np.zeros((0, 2), dtype=np.int64)

        labels = np.concatenate([np.zeros(base, np.int64), np.ones(cfg.pattern_nodes, np.int64)])
        graphs.append(
            build_graph(
                base + cfg.pattern_nodes,
                _both_directions(pairs),
                node_feat=np.concatenate([feats, p_feats]),
                node_labels=labels,
            )
        )

    return DatasetBundle(
        name="sbm_pattern",
        task="node_class",
        graphs=graphs,
        n_classes=2,
        splits=[ratio_split(cfg.n_graphs, cfg.split_ratio, split_rng(seed))],
        config=cfg.__dict__.copy(),
        seed=seed,
    )


def gen_cluster(cfg, seed=0):
    """Community-recovery corpus: labels are community ids, features reveal
    one member per community (code class+1), zero elsewhere."""
    graphs = []
    for i in range(cfg.n_graphs):
        rng = graph_rng(seed, i)
        sizes = _community_sizes(cfg, 0, rng)
        communities = np.repeat(np.arange(cfg.communities), sizes)
        pairs = sbm_edges(communities, cfg.p, cfg.q, rng)

        feats = np.zeros(communities.size, dtype=np.int64)
        offsets = np.concatenate([[0], np.cumsum(sizes)])
        for c in range(cfg.communities):
            revealed = offsets[c] + rng.integers(sizes[c])
            feats[revealed] = c + 1

        graphs.append(
            build_graph(
                communities.size,
                _both_directions(pairs),
                node_feat=feats,
                node_labels=communities.copy(),
            )
        )

    return DatasetBundle(
        name="sbm_cluster",
        task="node_class",
        graphs=graphs,
        n_classes=cfg.communities,
        splits=[ratio_split(cfg.n_graphs, cfg.split_ratio, split_rng(seed))],
        config=cfg.__dict__.copy(),
        seed=seed,
    )
