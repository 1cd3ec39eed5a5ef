"""Evaluation metrics: rank-based AUC, per-class precision, loss reports."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InputError, UndefinedMetricError


@dataclass
class EvalReport:
    """Per-node evaluation summary."""

    auc: float
    loss: float
    per_class_precision: np.ndarray
    n_samples: int


def _average_ranks(x: np.ndarray) -> np.ndarray:
    """1-based ranks with ties sharing their group's mean rank. O(n log n)."""
    _, inverse, counts = np.unique(x, return_inverse=True, return_counts=True)
    ends = np.cumsum(counts)
    starts = ends - counts + 1
    return ((starts + ends) / 2.0)[inverse]


def auc_binary(scores: np.ndarray, labels: np.ndarray) -> float:
    """Mann-Whitney AUC: P(score_pos > score_neg) with ties counted 0.5."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    if scores.shape != labels.shape or scores.ndim != 1:
        raise InputError("scores and labels must be matching 1-d vectors")
    if np.any((labels != 0) & (labels != 1)):
        raise InputError("binary AUC requires 0/1 labels")
    n_pos = int(labels.sum())
    n_neg = labels.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise UndefinedMetricError("AUC needs both classes present")
    ranks = _average_ranks(scores)
    rank_sum_pos = float(ranks[labels == 1].sum())
    u = rank_sum_pos - n_pos * (n_pos + 1) / 2.0
    return u / (n_pos * n_neg)


def auc_macro_ovr(probs: np.ndarray, labels: np.ndarray) -> float:
    """Unweighted mean of one-vs-rest AUC over the classes present.

    Each class present in ``labels`` is scored against the rest using its own
    probability column; absent classes are skipped.
    """
    probs = np.asarray(probs, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    if probs.ndim != 2 or probs.shape[0] != labels.shape[0]:
        raise InputError("probs must be (n, k) with one label per row")
    if labels.size and (labels.min() < 0 or labels.max() >= probs.shape[1]):
        raise InputError("labels outside the probability columns")
    present = np.unique(labels)
    if present.size < 2:
        raise UndefinedMetricError("macro AUC needs at least 2 classes present")
    per_class = [auc_binary(probs[:, c], (labels == c).astype(np.int64)) for c in present]
    return float(np.mean(per_class))


def precision_per_class(
    pred_labels: np.ndarray, true_labels: np.ndarray, n_classes: int
) -> np.ndarray:
    """Per-class precision TP/(TP+FP); never-predicted classes score 0."""
    pred = np.asarray(pred_labels, dtype=np.int64)
    true = np.asarray(true_labels, dtype=np.int64)
    if pred.shape != true.shape or pred.ndim != 1:
        raise InputError("prediction and truth must be matching 1-d vectors")
    for name, v in (("pred", pred), ("true", true)):
        if v.size and (v.min() < 0 or v.max() >= n_classes):
            raise InputError(f"{name} labels outside [0, {n_classes})")
    precision = np.zeros(n_classes)
    for c in range(n_classes):
        predicted_c = pred == c
        total = int(predicted_c.sum())
        if total > 0:
            precision[c] = float((true[predicted_c] == c).sum()) / total
    return precision
