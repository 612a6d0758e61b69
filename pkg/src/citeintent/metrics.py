"""Accuracy, macro-F1 and confusion matrices."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from ._kernels import confusion_counts
from .errors import DataError


@dataclass(frozen=True, eq=False)
class ConfusionMatrix:
    """Counts indexed by (gold label, predicted label)."""

    counts: np.ndarray
    labels: tuple

    def __post_init__(self):
        c = np.asarray(self.counts)
        n = len(self.labels)
        if c.shape != (n, n):
            raise DataError(f"confusion matrix shape {c.shape} does not match {n} labels")
        if np.any(c < 0) or not np.all(c == np.round(c)):
            raise DataError("confusion counts must be non-negative integers")
        object.__setattr__(self, "counts", c.astype(np.int64))

    @classmethod
    def from_predictions(cls, gold: Sequence[str], predicted: Sequence[str], labels: Sequence[str]) -> "ConfusionMatrix":
        pos = {lab: i for i, lab in enumerate(labels)}
        try:
            g = np.fromiter((pos[x] for x in gold), dtype=np.int64, count=len(gold))
            p = np.fromiter((pos[x] for x in predicted), dtype=np.int64, count=len(predicted))
        except KeyError as exc:
            raise DataError(f"label {exc.args[0]!r} not in {list(labels)}") from None
        return cls(confusion_counts(g, p, len(labels)), tuple(labels))

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def __eq__(self, other):
        return isinstance(other, ConfusionMatrix) and self.labels == other.labels and np.array_equal(self.counts, other.counts)

    def to_list(self) -> list[list[int]]:
        return self.counts.tolist()


def accuracy(cm: ConfusionMatrix) -> float:
    if cm.total == 0:
        raise DataError("accuracy of an empty confusion matrix is undefined")
    return float(np.trace(cm.counts)) / cm.total


def per_label_f1(cm: ConfusionMatrix) -> np.ndarray:
    """F1 per label; 0 wherever precision + recall is 0 (or undefined)."""
    c = cm.counts.astype(np.float64)
    tp = np.diag(c)
    predicted = c.sum(axis=0)
    gold = c.sum(axis=1)
    precision = np.divide(tp, predicted, out=np.zeros_like(tp), where=predicted > 0)
    recall = np.divide(tp, gold, out=np.zeros_like(tp), where=gold > 0)
    denom = precision + recall
    return np.divide(2 * precision * recall, denom, out=np.zeros_like(tp), where=denom > 0)


def macro_f1(cm: ConfusionMatrix) -> float:
    """Unweighted mean of per-label F1 over every schema label."""
    if cm.total == 0:
        raise DataError("macro-F1 needs at least one gold instance")
    return float(per_label_f1(cm).mean())


def confusion_report(cm: ConfusionMatrix | np.ndarray) -> np.ndarray:
    """Row-normalised percentages; rows without gold instances stay 0."""
    c = np.asarray(cm.counts if isinstance(cm, ConfusionMatrix) else cm, dtype=np.float64)
    rows = c.sum(axis=1, keepdims=True)
    return np.divide(100.0 * c, rows, out=np.zeros_like(c), where=rows > 0)
