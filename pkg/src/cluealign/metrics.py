"""Evaluation metrics computed from the confusion matrix."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np


def confusion_matrix(labels: Sequence[int], predictions: Sequence[int], n_classes: int) -> np.ndarray:
    """Rows are true classes, columns predicted classes."""
    labels = np.asarray(labels, dtype=np.int64)
    predictions = np.asarray(predictions, dtype=np.int64)
    if labels.shape != predictions.shape:
        raise ValueError("labels and predictions must have equal length")
    matrix = np.zeros((n_classes, n_classes), dtype=np.int64)
    np.add.at(matrix, (labels, predictions), 1)
    return matrix


@dataclass
class ClassMetrics:
    label: int
    precision: float
    recall: float
    f1: float
    support: int

    def to_dict(self) -> dict:
        return {
            "class": self.label,
            "precision": self.precision,
            "recall": self.recall,
            "f1": self.f1,
            "support": self.support,
        }


@dataclass
class MetricsReport:
    """Accuracy, macro F1, and per-class precision/recall/F1 for one split.

    For detection the binary positive-class (fake) F1 is reported alongside
    the macro value.
    """

    task: str
    accuracy: float
    f1: float
    per_class: list
    confusion: np.ndarray
    f1_positive: Optional[float] = None

    def to_dict(self) -> dict:
        payload = {
            "task": self.task,
            "accuracy": self.accuracy,
            "f1": self.f1,
            "per_class": [metrics.to_dict() for metrics in self.per_class],
            "confusion": self.confusion.tolist(),
        }
        if self.f1_positive is not None:
            payload["f1_positive"] = self.f1_positive
        return payload

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2), encoding="utf-8")

    @classmethod
    def from_confusion(cls, matrix: np.ndarray, task: str) -> "MetricsReport":
        matrix = np.asarray(matrix, dtype=np.int64)
        n_classes = matrix.shape[0]
        total = int(matrix.sum())
        accuracy = float(np.trace(matrix) / total) if total else 0.0
        per_class = []
        for label in range(n_classes):
            true_positive = float(matrix[label, label])
            predicted = float(matrix[:, label].sum())
            actual = float(matrix[label, :].sum())
            precision = true_positive / predicted if predicted else 0.0
            recall = true_positive / actual if actual else 0.0
            f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
            per_class.append(
                ClassMetrics(
                    label=label,
                    precision=precision,
                    recall=recall,
                    f1=f1,
                    support=int(actual),
                )
            )
        macro_f1 = float(np.mean([metrics.f1 for metrics in per_class])) if per_class else 0.0
        f1_positive = per_class[1].f1 if task == "detect" and n_classes == 2 else None
        return cls(
            task=task,
            accuracy=accuracy,
            f1=macro_f1,
            per_class=per_class,
            confusion=matrix,
            f1_positive=f1_positive,
        )


def evaluate_predictions(
    labels: Sequence[int], predictions: Sequence[int], task: str
) -> MetricsReport:
    n_classes = 2 if task == "detect" else 6
    matrix = confusion_matrix(labels, predictions, n_classes)
    return MetricsReport.from_confusion(matrix, task)
