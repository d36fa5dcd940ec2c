"""Dataset containers and split protocols.

A bundle is a list of graphs plus task metadata and one or more frozen
splits (several entries = k-fold). Split construction is deterministic
given a seed; stratified folds preserve class counts within one sample.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import ConfigError, ValidationError


@dataclass(frozen=True)
class Split:
    train: np.ndarray
    val: np.ndarray
    test: np.ndarray

    def __post_init__(self):
        for name in ("train", "val", "test"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=np.int64))

    def check(self, n):
        """Disjointness and coverage of 0..n-1."""
        parts = np.concatenate([self.train, self.val, self.test])
        if np.unique(parts).size != parts.size:
            raise ValidationError("split parts overlap")
        if parts.size != n or (np.sort(parts) != np.arange(n)).any():
            raise ValidationError(f"split does not cover all {n} items")

    def to_dict(self):
        return {
            "train": self.train.tolist(),
            "val": self.val.tolist(),
            "test": self.test.tolist(),
        }


@dataclass
class DatasetBundle:
    name: str
    task: str
    graphs: list
    n_classes: int | None = None
    splits: list = field(default_factory=list)
    config: dict = field(default_factory=dict)
    seed: int | None = None

    def __len__(self):
        return len(self.graphs)

    def subset(self, indices):
        return [self.graphs[int(i)] for i in indices]


def ratio_split(n, ratio, rng):
    """Shuffle 0..n-1 and cut train/val/test proportional to ``ratio``."""
    a, b, c = ratio
    if min(a, b, c) <= 0:
        raise ConfigError(f"ratio parts must be positive, got {ratio}")
    perm = rng.permutation(n)
    n_train = int(round(n * a / (a + b + c)))
    n_val = int(round(n * b / (a + b + c)))
    if n_train + n_val >= n:
        raise ValidationError(f"{n} items are too few for ratio {ratio}")
    split = Split(perm[:n_train], perm[n_train : n_train + n_val], perm[n_train + n_val :])
    split.check(n)
    return split


def stratified_kfold(labels, folds, rng):
    """Deal each class round-robin into ``folds`` test folds.

    Fold f uses fold f as test, fold f+1 (cyclically) as val, and the rest
    as train; with 5 folds that realizes a 3:1:1 ratio.
    """
    labels = np.asarray(labels, dtype=np.int64).reshape(-1)
    if folds < 3:
        raise ConfigError("need at least 3 folds for train/val/test")
    buckets = [[] for _ in range(folds)]
    for c in np.unique(labels):
        members = np.nonzero(labels == c)[0]
        if members.size < folds:
            raise ValidationError(
                f"class {c} has {members.size} samples, fewer than {folds} folds"
            )
        members = members[rng.permutation(members.size)]
        for j, idx in enumerate(members):
            buckets[j % folds].append(int(idx))
    buckets = [np.array(sorted(b), dtype=np.int64) for b in buckets]

    splits = []
    for f in range(folds):
        test = buckets[f]
        val = buckets[(f + 1) % folds]
        train = np.concatenate([buckets[j] for j in range(folds) if j not in (f, (f + 1) % folds)])
        split = Split(np.sort(train), val, test)
        split.check(labels.size)
        splits.append(split)
    return splits


def make_splits(bundle, scheme, seed=0):
    """Build splits for a bundle from a scheme dict; deterministic in seed.

    Schemes: {"kind": "ratio", "ratio": [a, b, c]} or
    {"kind": "stratified_kfold", "folds": k} (stratifies on graph labels).
    """
    rng = np.random.default_rng(np.random.SeedSequence([seed, _SPLIT_STREAM]))
    kind = scheme.get("kind")
    if kind == "ratio":
        return [ratio_split(len(bundle), tuple(scheme["ratio"]), rng)]
    if kind == "stratified_kfold":
        labels = [g.graph_label for g in bundle.graphs]
        if any(l is None for l in labels):
            raise ValidationError("stratified folds need graph labels")
        return stratified_kfold(labels, int(scheme["folds"]), rng)
    raise ConfigError(f"unknown split scheme {kind!r}")


# fixed stream tags keep the rng draws of graphs, splits, and corpus-level
# choices independent of each other under one root seed
_SPLIT_STREAM = 2
GRAPH_STREAM = 1
CORPUS_STREAM = 0


def graph_rng(seed, index):
    """Per-graph rng stream: content independent of generation order."""
    return np.random.default_rng(np.random.SeedSequence([seed, GRAPH_STREAM, index]))


def corpus_rng(seed):
    return np.random.default_rng(np.random.SeedSequence([seed, CORPUS_STREAM]))


def split_rng(seed):
    return np.random.default_rng(np.random.SeedSequence([seed, _SPLIT_STREAM]))
