"""Classification metrics for label predictions.

All metrics are derived from one confusion matrix (rows index the realized
label, columns the predicted one, in POLICY_LABELS order) so the
prediction-array path and the matrix path cannot disagree. Degenerate
denominators resolve to 0 rather than raising: a class never predicted has
precision 0, a class never realized has recall 0, and the matthews
coefficient of a constant predictor is 0.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .dataset import POLICY_LABELS


@dataclass
class ConfusionMatrix:
    counts: np.ndarray
    labels: tuple[str, ...] = POLICY_LABELS

    def __post_init__(self) -> None:
        self.counts = np.asarray(self.counts, dtype=np.int64)
        k = len(self.labels)
        if self.counts.shape != (k, k):
            raise ValueError(f"confusion matrix must be {k}x{k}")
        if np.any(self.counts < 0):
            raise ValueError("counts must be non-negative")

    @classmethod
    def from_predictions(
        cls,
        y_true: np.ndarray,
        y_pred: np.ndarray,
        labels: tuple[str, ...] = POLICY_LABELS,
    ) -> "ConfusionMatrix":
        y_true = np.asarray(y_true, dtype=np.int64)
        y_pred = np.asarray(y_pred, dtype=np.int64)
        if y_true.shape != y_pred.shape or y_true.ndim != 1:
            raise ValueError("y_true and y_pred must be equal-length 1-d arrays")
        if y_true.size == 0:
            raise ValueError("cannot score zero predictions")
        k = len(labels)
        if np.any((y_true < 0) | (y_true >= k)) or np.any((y_pred < 0) | (y_pred >= k)):
            raise ValueError(f"labels must lie in [0, {k})")
        counts = np.zeros((k, k), dtype=np.int64)
        np.add.at(counts, (y_true, y_pred), 1)
        return cls(counts, labels)

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def accuracy(self) -> float:
        if self.total == 0:
            raise ValueError("empty confusion matrix")
        return float(np.trace(self.counts) / self.total)

    def per_class_f1(self) -> np.ndarray:
        diag = np.diag(self.counts).astype(np.float64)
        pred = self.counts.sum(axis=0).astype(np.float64)
        true = self.counts.sum(axis=1).astype(np.float64)
        precision = np.divide(diag, pred, out=np.zeros_like(diag), where=pred > 0)
        recall = np.divide(diag, true, out=np.zeros_like(diag), where=true > 0)
        denom = precision + recall
        return np.divide(
            2 * precision * recall, denom, out=np.zeros_like(diag), where=denom > 0
        )

    def f1(self, average: str = "weighted") -> float:
        if average not in ("weighted", "macro"):
            raise ValueError("average must be 'weighted' or 'macro'")
        per_class = self.per_class_f1()
        if average == "macro":
            return float(per_class.mean())
        support = self.counts.sum(axis=1)
        if support.sum() == 0:
            raise ValueError("empty confusion matrix")
        return float((per_class * support).sum() / support.sum())

    def mcc(self) -> float:
        """Multiclass matthews correlation; 0 when either marginal is constant."""
        c = self.counts.astype(np.float64)
        s = c.sum()
        correct = np.trace(c)
        pred = c.sum(axis=0)
        true = c.sum(axis=1)
        cov = correct * s - float(pred @ true)
        denom_sq = (s * s - float(pred @ pred)) * (s * s - float(true @ true))
        if denom_sq <= 0:
            return 0.0
        return float(cov / np.sqrt(denom_sq))

    def to_nested_list(self) -> list[list[int]]:
        return [[int(v) for v in row] for row in self.counts]


def classification_report(y_true: np.ndarray, y_pred: np.ndarray) -> dict:
    """All headline metrics in one JSON-serializable dict."""
    cm = ConfusionMatrix.from_predictions(y_true, y_pred)
    return {
        "acc": cm.accuracy(),
        "f1_weighted": cm.f1("weighted"),
        "f1_macro": cm.f1("macro"),
        "mcc": cm.mcc(),
        "confusion": cm.to_nested_list(),
    }


def report_to_json(report: dict) -> str:
    return json.dumps(report, indent=2, sort_keys=True, allow_nan=False) + "\n"
