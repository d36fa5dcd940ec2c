"""Non-learnt and near-learnt reference baselines.

The nearest-neighbor heuristic bounds what tour prediction learns beyond
local geometry; matrix factorization bounds what link prediction gains
from node features, since it sees none.
"""

from __future__ import annotations

import numpy as np

from .. import tensor as T
from ..errors import ValidationError
from ..metrics import MetricReport, f1_positive, hits_at_k
from ..optim import Adam


def _knn_membership(points, k):
    """Boolean (n, n): entry (i, j) true iff j is one of i's k nearest."""
    diff = points[:, None, :] - points[None, :, :]
    dist = np.sqrt((diff * diff).sum(axis=-1))
    np.fill_diagonal(dist, np.inf)
    order = np.argsort(dist, axis=1, kind="stable")[:, :k]
    member = np.zeros(dist.shape, dtype=bool)
    member[np.repeat(np.arange(len(points)), k), order.reshape(-1)] = True
    return member


def tsp_knn_baseline(bundle, k=2):
    """Predict an arc positive iff either endpoint ranks the other within
    its k nearest; micro-averaged F1 over every arc in the corpus."""
    preds, labels = [], []
    for g in bundle.graphs:
        if g.positions is None or g.edge_labels is None:
            raise ValidationError("baseline needs positions and arc labels")
        member = _knn_membership(g.positions, min(k, g.n - 1))
        preds.append((member[g.src, g.dst] | member[g.dst, g.src]).astype(np.int64))
        labels.append(g.edge_labels)
    preds = np.concatenate(preds)
    labels = np.concatenate(labels)
    return MetricReport("f1_positive", f1_positive(preds, labels), support=preds.size)


def _logistic_loss(scores, targets):
    """Mean log(1 + exp(-t*s)) with t in {0, 1}; fused for stability."""
    s = scores.data.reshape(-1)
    loss = np.asarray(np.mean(np.logaddexp(0.0, s) - targets * s))

    def backward(g, needs):
        p = 1.0 / (1.0 + np.exp(-s))
        return ((g * (p - targets) / s.size).reshape(scores.shape),)

    return T.apply_op("logistic_loss", loss, (scores,), backward)


def _pair_scores(emb, pairs):
    zu = T.gather_rows(emb, pairs[:, 0])
    zv = T.gather_rows(emb, pairs[:, 1])
    return T.reduce_sum(T.mul(zu, zv), axis=1)


def _sample_pairs(n, count, rng):
    """Uniform node pairs without self-loops."""
    u = rng.integers(0, n, size=count)
    v = rng.integers(0, n - 1, size=count)
    v = np.where(v >= u, v + 1, v)
    return np.stack([u, v], axis=1)


def _eval_negatives(n, count, known_pairs, rng):
    """Distinct non-link pairs for ranking; known links are never negatives."""
    known = {(min(u, v), max(u, v)) for u, v in known_pairs}
    available = n * (n - 1) // 2 - len(known)
    if available < 1:
        raise ValidationError("no negative pairs exist")
    count = min(count, available)
    seen, out = set(), []
    while len(out) < count:
        u = int(rng.integers(0, n))
        v = int(rng.integers(0, n - 1))
        v = v + 1 if v >= u else v
        key = (min(u, v), max(u, v))
        if key in known or key in seen:
            continue
        seen.add(key)
        out.append((u, v))
    return np.array(out, dtype=np.int64)


def matrix_factorization_baseline(
    link,
    dim=32,
    epochs=200,
    lr=1e-2,
    n_negatives=1000,
    k=50,
    seed=0,
):
    """Feature-agnostic dot-product embeddings scored by hits@k on the
    test pairs against a shared sample of random negative pairs."""
    n = link.graph.n
    if len(link.train) == 0:
        raise ValidationError("no training edges")
    rng = np.random.default_rng(np.random.SeedSequence([seed, 3]))
    emb = T.parameter(rng.normal(scale=0.1, size=(n, dim)))
    opt = Adam([emb], lr=lr)

    for _ in range(epochs):
        neg = _sample_pairs(n, len(link.train), rng)
        pairs = np.concatenate([link.train, neg])
        targets = np.concatenate([np.ones(len(link.train)), np.zeros(len(neg))])
        with T.Tape() as tape:
            loss = _logistic_loss(_pair_scores(emb, pairs), targets)
            opt.zero_grad()
            tape.backward(loss)
        opt.step()

    eval_rng = np.random.default_rng(np.random.SeedSequence([seed, 4]))
    known = np.concatenate([link.train, link.val, link.test])
    negs = _eval_negatives(n, n_negatives, known, eval_rng)
    with T.no_grad():
        pos_scores = _pair_scores(emb, link.test).data
        neg_scores = _pair_scores(emb, negs).data
    value = hits_at_k(pos_scores, neg_scores, min(k, len(negs) + 1))
    return MetricReport("hits_at_k", value, support=len(link.test))
