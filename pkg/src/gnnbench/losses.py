"""Training losses on raw scores.

Cross entropy fuses the log-softmax for stability; the weighted form
reweights each sample by N / (C * N_c) computed from the batch at hand, so
a perfectly balanced batch reduces to the unweighted loss exactly.
"""

from __future__ import annotations

import numpy as np

from . import tensor as T
from .errors import DimensionError, ValidationError


def _check_inputs(logits, labels):
    logits = T.as_tensor(logits)
    if len(logits.shape) != 2:
        raise DimensionError(f"expected (n, classes) scores, got {logits.shape}")
    n, c = logits.shape
    labels = np.asarray(labels, dtype=np.int64).reshape(-1)
    if n == 0 or labels.size == 0:
        raise ValidationError("empty batch")
    if labels.size != n:
        raise DimensionError(f"{n} rows of scores but {labels.size} labels")
    if labels.min() < 0 or labels.max() >= c:
        raise IndexError(f"label out of range for {c} classes")
    return logits, labels


def _ce(logits, labels, sample_weight):
    n, c = logits.shape
    z = logits.data
    m = z.max(axis=1, keepdims=True)
    lse = m[:, 0] + np.log(np.exp(z - m).sum(axis=1))
    per_sample = lse - z[np.arange(n), labels]
    loss = np.asarray(float(per_sample @ sample_weight) / n)

    def backward(g, needs):
        sm = np.exp(z - m)
        sm /= sm.sum(axis=1, keepdims=True)
        sm[np.arange(n), labels] -= 1.0
        return (g * sm * sample_weight[:, None] / n,)

    return T.apply_op("cross_entropy", loss, (logits,), backward)


def cross_entropy(logits, labels):
    """Mean negative log-likelihood of integer labels under softmax scores."""
    logits, labels = _check_inputs(logits, labels)
    return _ce(logits, labels, np.ones(labels.size))


def weighted_cross_entropy(logits, labels):
    """Cross entropy with per-batch inverse-frequency class weights."""
    logits, labels = _check_inputs(logits, labels)
    n, c = logits.shape
    counts = np.bincount(labels, minlength=c).astype(np.float64)
    weights = np.zeros(c)
    present = counts > 0
    weights[present] = n / (c * counts[present])
    return _ce(logits, labels, weights[labels])


def l1_loss(pred, target):
    """Mean absolute error, differentiable in ``pred``."""
    pred = T.as_tensor(pred)
    target = np.asarray(target, dtype=np.float64).reshape(-1)
    if pred.data.size == 0:
        raise ValidationError("empty batch")
    if pred.data.size != target.size:
        raise DimensionError(f"{pred.data.size} predictions but {target.size} targets")
    diff = pred.data.reshape(-1) - target
    loss = np.asarray(np.abs(diff).mean())

    def backward(g, needs):
        return ((g * np.sign(diff) / target.size).reshape(pred.shape),)

    return T.apply_op("l1_loss", loss, (pred,), backward)
