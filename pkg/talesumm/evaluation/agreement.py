"""
Agreement between label sources (raters): Cronbach's alpha, pairwise F1, Fleiss' kappa
"""
from dataclasses import dataclass, field
from itertools import combinations
from typing import List

import numpy as np
from sklearn.metrics import f1_score

from ..core.errors import MetricError


@dataclass
class RaterMatrix:
    """
    R x N scores in [0, 1]; one binarization threshold per rater
    """

    scores: np.ndarray
    thresholds: List[float] = field(default_factory=list)

    def __post_init__(self):
        self.scores = np.asarray(self.scores, dtype=np.float64)
        if self.scores.ndim != 2:
            raise MetricError(f"rater matrix must be 2-D, got shape {self.scores.shape}")
        if not np.isfinite(self.scores).all():
            raise MetricError("rater matrix has missing or non-finite entries")
        if self.scores.size and (self.scores.min() < 0 or self.scores.max() > 1):
            raise MetricError("rater scores must lie in [0, 1]")
        if not self.thresholds:
            self.thresholds = [0.5] * self.num_raters
        if len(self.thresholds) != self.num_raters:
            raise MetricError(f"{len(self.thresholds)} thresholds for {self.num_raters} raters")

    @property
    def num_raters(self) -> int:
        return int(self.scores.shape[0])

    @property
    def num_items(self) -> int:
        return int(self.scores.shape[1])

    def binarized(self) -> np.ndarray:
        thresholds = np.asarray(self.thresholds, dtype=np.float64)[:, None]
        return (self.scores >= thresholds).astype(np.int64)

    def require(self, raters: int = 2, items: int = 1) -> None:
        if self.num_raters < raters:
            raise MetricError(f"agreement needs at least {raters} raters, got {self.num_raters}")
        if self.num_items < items:
            raise MetricError(f"agreement needs at least {items} items, got {self.num_items}")


def cronbach_alpha(matrix: RaterMatrix) -> float:
    """
    Raters as test items, shots as observations; sample variances (N - 1)
    """
    matrix.require(raters=2, items=2)
    raters = matrix.num_raters
    item_variances = matrix.scores.var(axis=1, ddof=1).sum()
    total_variance = matrix.scores.sum(axis=0).var(ddof=1)
    if total_variance == 0:
        raise MetricError("Cronbach's alpha is undefined when the summed scores have zero variance")
    return float(raters / (raters - 1) * (1.0 - item_variances / total_variance))


def pairwise_f1(matrix: RaterMatrix) -> float:
    matrix.require(raters=2)
    selections = matrix.binarized()
    empty = [r for r in range(matrix.num_raters) if selections[r].sum() == 0]
    if empty:
        raise MetricError(f"raters {empty} select no items")
    values = [
        f1_score(selections[a], selections[b])
        for a, b in combinations(range(matrix.num_raters), 2)
    ]
    return float(np.mean(values))


def fleiss_kappa(matrix: RaterMatrix) -> float:
    """
    Fleiss' kappa over the two categories obtained by per-rater binarization
    """
    matrix.require(raters=2)
    raters, items = matrix.num_raters, matrix.num_items
    positive = matrix.binarized().sum(axis=0).astype(np.float64)
    counts = np.stack([raters - positive, positive], axis=1)  # items x categories

    per_item = (counts * (counts - 1)).sum(axis=1) / (raters * (raters - 1))
    agreement = per_item.mean()
    proportions = counts.sum(axis=0) / (items * raters)
    expected = float((proportions ** 2).sum())
    if np.isclose(expected, 1.0):
        raise MetricError("Fleiss' kappa is undefined when every rating falls in one category")
    return float((agreement - expected) / (1.0 - expected))
