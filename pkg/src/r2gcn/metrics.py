"""Evaluation metrics: per-student accuracy averages and weighted F1.

Three aggregate metrics are reported everywhere (models and baselines share
this module): the mean of per-student accuracies, the pooled accuracy over
all predicted questions, and the mean of per-student support-weighted F1
scores.
"""

from __future__ import annotations

import numpy as np

NUM_CLASSES = 4


def accuracy(y_true: np.ndarray, y_pred: np.ndarray) -> float:
    y_true = np.asarray(y_true)
    y_pred = np.asarray(y_pred)
    if y_true.shape != y_pred.shape:
        raise ValueError(f"shape mismatch {y_true.shape} vs {y_pred.shape}")
    if y_true.size == 0:
        raise ValueError("cannot compute accuracy of zero predictions")
    return float(np.mean(y_true == y_pred))


def ap_acc(counts: list[tuple[int, int]]) -> float:
    """Mean over students of (correct / predicted): every student weighs the same."""
    if not counts:
        raise ValueError("no students")
    if any(n <= 0 for _, n in counts):
        raise ValueError("every student needs at least one prediction")
    return float(np.mean([c / n for c, n in counts]))


def o_acc(counts: list[tuple[int, int]]) -> float:
    """Pooled accuracy: total correct over total predicted questions."""
    total = sum(n for _, n in counts)
    if total <= 0:
        raise ValueError("no predictions")
    return sum(c for c, _ in counts) / total


def weighted_f1(y_true, y_pred, num_classes: int = NUM_CLASSES) -> float:
    """Support-weighted F1; classes with zero precision+recall contribute 0."""
    y_true = np.asarray(y_true, dtype=np.int64)
    y_pred = np.asarray(y_pred, dtype=np.int64)
    if y_true.shape != y_pred.shape or y_true.ndim != 1:
        raise ValueError(f"shape mismatch {y_true.shape} vs {y_pred.shape}")
    if y_true.size == 0:
        raise ValueError("cannot compute F1 of zero predictions")
    if y_true.min() < 0 or y_true.max() >= num_classes:
        raise ValueError(f"labels must be in 0..{num_classes - 1}")
    total = len(y_true)
    score = 0.0
    for c in range(num_classes):
        support = int(np.sum(y_true == c))
        if support == 0:
            continue
        tp = int(np.sum((y_true == c) & (y_pred == c)))
        predicted = int(np.sum(y_pred == c))
        precision = tp / predicted if predicted else 0.0
        recall = tp / support
        f1 = 2 * precision * recall / (precision + recall) if precision + recall > 0 else 0.0
        score += support / total * f1
    return score


def apw_f1(per_student: list[tuple[np.ndarray, np.ndarray]], num_classes: int = NUM_CLASSES) -> float:
    """Mean over students of their support-weighted F1."""
    if not per_student:
        raise ValueError("no students")
    return float(np.mean([weighted_f1(t, p, num_classes) for t, p in per_student]))


def summarize(per_student: list[tuple[np.ndarray, np.ndarray]]) -> dict[str, float]:
    """All three aggregate metrics from per-student (y_true, y_pred) pairs."""
    counts = [(int(np.sum(np.asarray(t) == np.asarray(p))), len(t)) for t, p in per_student]
    return {
        "ap_acc": ap_acc(counts),
        "o_acc": o_acc(counts),
        "apw_f1": apw_f1(per_student),
    }
