"""Circulant skip-link graphs: ten 4-regular isomorphism classes.

Each class is the cycle 0-1-...-N-1 plus chords at a fixed skip; copies
are independent uniform relabelings. Node features are the constant code
0 (the task carries no intrinsic features) and the label is the class.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import ConfigError
from ..graphs import build_graph
from .bundle import DatasetBundle, graph_rng, split_rng, stratified_kfold

DEFAULT_SKIPS = (2, 3, 4, 5, 6, 9, 11, 12, 13, 16)


@dataclass(frozen=True)
class CslConfig:
    n: int = 41
    skips: tuple = DEFAULT_SKIPS
    copies_per_class: int = 15
    folds: int = 5

    def __post_init__(self):
        if self.copies_per_class < 1:
            raise ConfigError("copies_per_class must be positive")
        for skip in self.skips:
            if skip < 2:
                raise ConfigError(f"skip {skip} collapses onto the cycle")
            if self.n <= 2 * skip:
                raise ConfigError(
                    f"skip {skip} is degenerate at {self.n} nodes (need n > 2*skip)"
                )


def circulant_pairs(n, skip):
    """Undirected edges of the cycle plus skip chords."""
    idx = np.arange(n)
    cycle = np.stack([idx, (idx + 1) % n], axis=1)
    chords = np.stack([idx, (idx + skip) % n], axis=1)
    pairs = np.concatenate([cycle, chords])
    # canonicalize and dedupe; distinct for 2 <= skip < n/2 but cheap to assert
    pairs = np.sort(pairs, axis=1)
    return np.unique(pairs, axis=0)


def gen_csl(cfg=CslConfig(), seed=0):
    graphs = []
    for class_id, skip in enumerate(cfg.skips):
        pairs = circulant_pairs(cfg.n, skip)
        for copy in range(cfg.copies_per_class):
            rng = graph_rng(seed, class_id * cfg.copies_per_class + copy)
            perm = rng.permutation(cfg.n)
            relabeled = perm[pairs]
            arcs = np.concatenate([relabeled, relabeled[:, ::-1]])
            graphs.append(
                build_graph(
                    cfg.n,
                    arcs,
                    node_feat=np.zeros(cfg.n, dtype=np.int64),
                    graph_label=class_id,
                )
            )

    labels = [g.graph_label for g in graphs]
    return DatasetBundle(
        name="csl",
        task="graph_class",
        graphs=graphs,
        n_classes=len(cfg.skips),
        splits=stratified_kfold(labels, cfg.folds, split_rng(seed)),
        config=cfg.__dict__.copy(),
        seed=seed,
    )
