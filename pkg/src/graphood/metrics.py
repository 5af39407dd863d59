"""Evaluation measures: AUROC, binary micro-F1, in-distribution accuracy."""

from __future__ import annotations

import numpy as np
from scipy.stats import rankdata


class MetricError(ValueError):
    pass


def metric_auroc(scores: np.ndarray, ood_truth: np.ndarray) -> float:
    """Rank-based (Mann-Whitney) AUROC with midrank tie handling."""
    scores = np.asarray(scores, dtype=np.float64)
    truth = np.asarray(ood_truth, dtype=bool)
    n_pos = int(truth.sum())
    n_neg = truth.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise MetricError("AUROC undefined: only one class present")
    ranks = rankdata(scores, method="average")
    u = ranks[truth].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def metric_micro_f1(ood_mask: np.ndarray, ood_truth: np.ndarray) -> float:
    """Micro-averaged F1 of the binary ID-vs-OOD decision.

    For single-label binary decisions this equals accuracy; reported under
    the micro-F1 name for comparability.
    """
    mask = np.asarray(ood_mask, dtype=bool)
    truth = np.asarray(ood_truth, dtype=bool)
    if mask.size == 0:
        raise MetricError("empty decision vector")
    return float((mask == truth).mean())


def metric_id_accuracy(class_predictions: np.ndarray, labels: np.ndarray,
                       ood_truth: np.ndarray) -> float:
    """Classification accuracy restricted to the in-distribution vertices."""
    preds = np.asarray(class_predictions)
    labels = np.asarray(labels)
    id_mask = ~np.asarray(ood_truth, dtype=bool)
    if not id_mask.any():
        raise MetricError("no in-distribution vertices")
    return float((preds[id_mask] == labels[id_mask]).mean())
