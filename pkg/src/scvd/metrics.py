"""Confusion-matrix bookkeeping and the four headline metrics.

Convention: rows are true labels, columns are predictions. Averaging is
support-weighted by default; macro is available. A class absent from the
denominator contributes 0 (no NaN propagation).
"""
from __future__ import annotations

import numpy as np

NUM_CLASSES = 3


def confusion_matrix(y_true, y_pred, num_classes: int = NUM_CLASSES) -> np.ndarray:
    matrix = np.zeros((num_classes, num_classes), dtype=np.int64)
    for t, p in zip(y_true, y_pred):
        matrix[int(t), int(p)] += 1
    return matrix


def _safe_div(num: float, den: float) -> float:
    return num / den if den else 0.0


def per_class_metrics(matrix: np.ndarray) -> dict[str, list[float]]:
    n = matrix.shape[0]
    row = matrix.sum(axis=1)
    col = matrix.sum(axis=0)
    precision = [_safe_div(float(matrix[c, c]), float(col[c])) for c in range(n)]
    recall = [_safe_div(float(matrix[c, c]), float(row[c])) for c in range(n)]
    f1 = [
        _safe_div(2.0 * precision[c] * recall[c], precision[c] + recall[c])
        for c in range(n)
    ]
    return {"precision": precision, "recall": recall, "f1": f1}


def metrics_from_confusion(matrix: np.ndarray, average: str = "weighted") -> dict[str, float]:
    """Accuracy plus averaged precision/recall/F1.

    With support weighting, the recall average telescopes to trace/total, so
    weighted recall equals accuracy exactly (computed that way here rather
    than through the per-class floats).
    """
    matrix = np.asarray(matrix, dtype=np.int64)
    total = int(matrix.sum())
    accuracy = _safe_div(float(np.trace(matrix)), float(total))
    per_class = per_class_metrics(matrix)
    support = matrix.sum(axis=1)

    if average == "weighted":
        weighted = {
            name: _safe_div(
                float(sum(s * v for s, v in zip(support, values))), float(total)
            )
            for name, values in per_class.items()
        }
        weighted["recall"] = accuracy
        averaged = weighted
    elif average == "macro":
        averaged = {
            name: float(sum(values)) / matrix.shape[0] for name, values in per_class.items()
        }
    else:
        raise ValueError(f"unknown averaging scheme {average!r}")

    return {
        "accuracy": accuracy,
        "precision": averaged["precision"],
        "recall": averaged["recall"],
        "f1": averaged["f1"],
    }
