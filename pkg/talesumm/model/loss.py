"""
Class-balanced binary cross-entropy over shot and dialog scores
"""
import logging

import numpy as np
import torch

from ..core.errors import LabelError, ShapeError
from ..processor.label_builder import LabelSet
from .talesumm import EpisodeScores

logger = logging.getLogger(__name__)

PROBABILITY_CLAMP = 1e-7


def positive_weight(labels: np.ndarray, threshold: float = 0.5) -> float:
    """
    #negatives / max(1, #positives), with positive meaning label >= threshold
    """
    labels = np.asarray(labels, dtype=np.float64)
    positives = int((labels >= threshold).sum())
    negatives = int((labels < threshold).sum())
    return negatives / max(1, positives)


def weighted_bce(
    predictions: torch.Tensor, targets: torch.Tensor, pos_weight: float
) -> torch.Tensor:
    """
    mean(-[w * y * log(p) + (1 - y) * log(1 - p)]) with p clamped away from 0 and 1
    """
    if predictions.shape != targets.shape:
        raise ShapeError(
            f"{tuple(predictions.shape)} predictions for {tuple(targets.shape)} targets"
        )
    if not torch.isfinite(predictions).all():
        raise LabelError("predictions contain non-finite values")
    if (predictions < 0).any() or (predictions > 1).any():
        raise LabelError("predictions must be probabilities in [0, 1]")
    clamped = predictions.clamp(PROBABILITY_CLAMP, 1.0 - PROBABILITY_CLAMP)
    terms = pos_weight * targets * torch.log(clamped) + (1.0 - targets) * torch.log1p(-clamped)
    return -terms.mean()


def compute_loss(scores: EpisodeScores, labels: LabelSet) -> torch.Tensor:
    """
    Sum of the per-modality weighted BCE terms; a modality without scores
    (omitted from the model) contributes nothing
    """
    total = None
    pairs = (
        ("shot", scores.shot_scores, labels.shot_scores),
        ("dialog", scores.dialog_scores, labels.dialog_scores),
    )
    for name, predicted, target in pairs:
        if predicted.numel() == 0:
            continue
        if predicted.numel() != len(target):
            raise ShapeError(f"{predicted.numel()} {name} scores for {len(target)} {name} labels")
        weight = positive_weight(target, labels.binarize_threshold)
        targets = torch.as_tensor(target, dtype=predicted.dtype)
        term = weighted_bce(predicted, targets, weight)
        total = term if total is None else total + term

    if total is None:
        return torch.zeros(())
    return total
