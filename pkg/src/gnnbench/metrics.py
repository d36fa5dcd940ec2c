"""Evaluation metrics on plain arrays (no gradients involved).

Classification metrics take predicted class ids, not raw scores; use
``predict_classes`` to collapse scores first. ``hits_at_k`` scores ties
pessimistically: a positive tied with the k-th best negative is a miss.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimensionError, ValidationError


@dataclass(frozen=True)
class MetricReport:
    name: str
    value: float
    support: int

    def __post_init__(self):
        if not np.isfinite(self.value):
            raise ValidationError(f"metric {self.name!r} is not finite")
        if self.support < 1:
            raise ValidationError(f"metric {self.name!r} has empty support")


def predict_classes(scores):
    """Row-wise argmax of (n, classes) scores."""
    scores = np.asarray(scores)
    if scores.ndim != 2:
        raise DimensionError(f"expected (n, classes) scores, got {scores.shape}")
    return scores.argmax(axis=1)


def _paired(pred, labels):
    pred = np.asarray(pred).reshape(-1)
    labels = np.asarray(labels).reshape(-1)
    if pred.size == 0:
        raise ValidationError("empty prediction set")
    if pred.size != labels.size:
        raise DimensionError(f"{pred.size} predictions but {labels.size} labels")
    return pred, labels


def accuracy(pred, labels):
    pred, labels = _paired(pred, labels)
    return float((pred == labels).mean())


def balanced_accuracy(pred, labels):
    """Mean per-class recall over the classes present in the labels."""
    pred, labels = _paired(pred, labels)
    recalls = [
        (pred[labels == c] == c).mean() for c in np.unique(labels)
    ]
    return float(np.mean(recalls))


def f1_positive(pred, labels):
    """F1 of the positive class (label 1) in a binary task."""
    pred, labels = _paired(pred, labels)
    tp = int(np.sum((pred == 1) & (labels == 1)))
    fp = int(np.sum((pred == 1) & (labels != 1)))
    fn = int(np.sum((pred != 1) & (labels == 1)))
    if tp == 0:
        return 0.0
    precision = tp / (tp + fp)
    recall = tp / (tp + fn)
    return float(2 * precision * recall / (precision + recall))


def mae(pred, target):
    pred, target = _paired(pred, target)
    return float(np.abs(pred.astype(np.float64) - target).mean())


def hits_at_k(pos_scores, neg_scores, k):
    """Fraction of positives scoring strictly above the k-th best negative."""
    pos = np.asarray(pos_scores, dtype=np.float64).reshape(-1)
    neg = np.asarray(neg_scores, dtype=np.float64).reshape(-1)
    if pos.size == 0 or neg.size == 0:
        raise ValidationError("empty score set")
    if not 1 <= k <= neg.size + 1:
        raise ValidationError(f"k={k} outside [1, {neg.size + 1}]")
    if k > neg.size:
        return 1.0
    threshold = np.sort(neg)[neg.size - k]
    return float((pos > threshold).mean())
