"""Confusion matrices and unweighted / weighted average recall."""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from vjepa_fer.errors import DimensionError, ProtocolError


@dataclass
class ConfusionMatrix:
    """Rows are ground truth, columns are predictions."""

    labels: tuple[str, ...]
    counts: np.ndarray

    def __post_init__(self):
        self.counts = np.asarray(self.counts, dtype=np.int64)
        k = len(self.labels)
        if self.counts.shape != (k, k):
            raise DimensionError(f"confusion counts {self.counts.shape} for {k} labels")
        if (self.counts < 0).any():
            raise ProtocolError("confusion counts must be non-negative")

    @classmethod
    def zeros(cls, labels) -> "ConfusionMatrix":
        return cls(tuple(labels), np.zeros((len(labels), len(labels)), dtype=np.int64))

    @classmethod
    def from_indices(cls, labels, y_true, y_pred) -> "ConfusionMatrix":
        cm = cls.zeros(labels)
        np.add.at(cm.counts, (np.asarray(y_true, dtype=np.int64), np.asarray(y_pred, dtype=np.int64)), 1)
        return cm

    def add(self, true_idx: int, pred_idx: int) -> None:
        self.counts[true_idx, pred_idx] += 1

    def __add__(self, other: "ConfusionMatrix") -> "ConfusionMatrix":
        if self.labels != other.labels:
            raise DimensionError("cannot add confusion matrices over different label sets")
        return ConfusionMatrix(self.labels, self.counts + other.counts)

    @property
    def support(self) -> np.ndarray:
        """|D_c|: ground-truth occurrences per class."""
        return self.counts.sum(axis=1)

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def recalls(self) -> np.ndarray:
        """TP / (TP + FN) per class; NaN where the class has no samples."""
        sup = self.support
        tp = np.diag(self.counts).astype(np.float64)
        with np.errstate(invalid="ignore", divide="ignore"):
            return np.where(sup > 0, tp / np.maximum(sup, 1), np.nan)


def uar(cm: ConfusionMatrix) -> float:
    """Mean per-class recall.  Classes without ground-truth samples are left out (with a warning)."""
    rec = cm.recalls()
    present = ~np.isnan(rec)
    if not present.any():
        raise ProtocolError("UAR of an empty confusion matrix")
    if not present.all():
        absent = [cm.labels[i] for i in np.flatnonzero(~present)]
        warnings.warn(f"UAR excludes classes with no samples: {absent}", RuntimeWarning, stacklevel=2)
    return float(rec[present].mean())


def war(cm: ConfusionMatrix) -> float:
    """Support-weighted recall, which is the overall accuracy trace / |D|."""
    total = cm.total
    if total == 0:
        raise ProtocolError("WAR of an empty confusion matrix")
    return float(np.trace(cm.counts) / total)
