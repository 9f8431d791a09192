"""
Budgeted summary selection: exact 0/1 knapsack over shot durations
"""
import logging
import math
from typing import List, Sequence

import numpy as np

from ..core.errors import MetricError

logger = logging.getLogger(__name__)

DURATION_QUANTUM = 0.1  # seconds
VALUE_TOLERANCE = 1e-9


def quantize_durations(durations: Sequence[float]) -> np.ndarray:
    durations = np.asarray(durations, dtype=np.float64)
    if durations.size and (not np.isfinite(durations).all() or (durations <= 0).any()):
        raise MetricError("durations must be positive and finite")
    return np.maximum(1, np.floor(durations / DURATION_QUANTUM + 0.5)).astype(np.int64)


def knapsack_select(
    scores: Sequence[float],
    durations: Sequence[float],
    budget_fraction: float = 0.15,
) -> List[int]:
    """
    Indices maximizing the summed score with total duration within
    budget_fraction of the episode.

    Ties go to the lower total duration, then to the lexicographically
    smallest index set.
    """
    scores = np.asarray(scores, dtype=np.float64)
    weights = quantize_durations(durations)
    if len(scores) != len(weights):
        raise MetricError(f"{len(scores)} scores for {len(weights)} durations")
    if not 0.0 < budget_fraction <= 1.0:
        raise MetricError(f"budget fraction must lie in (0, 1], got {budget_fraction}")
    count = len(scores)
    if count == 0:
        return []
    if budget_fraction >= 1.0:
        return list(range(count))

    capacity = int(math.floor(budget_fraction * int(weights.sum()) + 1e-9))

    # best value / duration using items i..n-1 at every capacity
    value = np.zeros((count + 1, capacity + 1), dtype=np.float64)
    weight = np.zeros((count + 1, capacity + 1), dtype=np.int64)
    keep = np.zeros((count, capacity + 1), dtype=bool)

    for i in range(count - 1, -1, -1):
        q = int(weights[i])
        skip_value, skip_weight = value[i + 1], weight[i + 1]
        take_value = np.full(capacity + 1, -np.inf)
        take_weight = np.zeros(capacity + 1, dtype=np.int64)
        if q <= capacity:
            take_value[q:] = scores[i] + skip_value[: capacity + 1 - q]
            take_weight[q:] = q + skip_weight[: capacity + 1 - q]
        tied = np.abs(take_value - skip_value) <= VALUE_TOLERANCE
        better = (take_value > skip_value + VALUE_TOLERANCE) | (tied & (take_weight <= skip_weight))
        keep[i] = better
        value[i] = np.where(better, take_value, skip_value)
        weight[i] = np.where(better, take_weight, skip_weight)

    selected = []
    remaining = capacity
    for i in range(count):
        if keep[i, remaining]:
            selected.append(i)
            remaining -= int(weights[i])

    logger.debug(
        f"Knapsack picked {len(selected)}/{count} items, value {value[0, capacity]:.4f}, "
        f"{weight[0, capacity] * DURATION_QUANTUM:.1f}s of {capacity * DURATION_QUANTUM:.1f}s"
    )
    return selected
