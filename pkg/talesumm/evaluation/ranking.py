"""
Ranking metrics: average precision, rank correlations, budgeted-summary F1
"""
from typing import Sequence

import numpy as np
from scipy.stats import kendalltau, spearmanr
from sklearn.metrics import f1_score

from ..core.errors import MetricError
from .selection import knapsack_select

RANK_KINDS = ("kendall", "spearman")


def average_precision(scores: Sequence[float], labels: Sequence[int]) -> float:
    """
    Mean of precision@k over the ranks k that hold a positive.
    Ranking is by score descending, ties by ascending index.
    """
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    if scores.shape != labels.shape or scores.ndim != 1:
        raise MetricError(f"{scores.shape} scores for {labels.shape} labels")
    if not np.isfinite(scores).all():
        raise MetricError("scores contain non-finite values")
    if not np.isin(labels, (0, 1)).all():
        raise MetricError("average precision expects binary labels")
    positives = int(labels.sum())
    if positives == 0:
        raise MetricError("average precision is undefined without positive labels")

    order = np.argsort(-scores, kind="stable")
    relevant = labels[order].astype(np.float64)
    precision_at_k = np.cumsum(relevant) / np.arange(1, len(relevant) + 1)
    return float((precision_at_k * relevant).sum() / positives)


def rank_correlation(a: Sequence[float], b: Sequence[float], kind: str = "kendall") -> float:
    """
    Kendall tau-b or Spearman rho between two score vectors
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if kind not in RANK_KINDS:
        raise MetricError(f"unknown rank correlation '{kind}', expected one of {RANK_KINDS}")
    if a.shape != b.shape or a.ndim != 1:
        raise MetricError(f"cannot correlate vectors of shapes {a.shape} and {b.shape}")
    if len(a) < 2:
        raise MetricError("rank correlation needs at least two items")
    if len(np.unique(a)) < 2 or len(np.unique(b)) < 2:
        raise MetricError("rank correlation is undefined for a constant vector")

    if kind == "kendall":
        statistic = kendalltau(a, b, variant="b").statistic
    else:
        statistic = spearmanr(a, b).statistic
    return float(np.clip(statistic, -1.0, 1.0))


def summary_f1(
    scores: Sequence[float],
    labels: Sequence[float],
    durations: Sequence[float],
    budget_fraction: float = 0.15,
    threshold: float = 0.5,
) -> float:
    """
    F1 between the knapsack summary built from scores and the binarized labels
    """
    labels = np.asarray(labels, dtype=np.float64)
    selected = knapsack_select(scores, durations, budget_fraction)
    predicted = np.zeros(len(labels), dtype=np.int64)
    predicted[selected] = 1
    truth = (labels >= threshold).astype(np.int64)
    return float(f1_score(truth, predicted, zero_division=0.0))
