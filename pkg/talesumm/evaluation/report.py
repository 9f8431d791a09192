"""
Per-episode metrics, split-level reports and label-source agreement blocks
"""
import logging
from dataclasses import dataclass
from datetime import datetime, timezone
from typing import Callable, Dict, Optional, Sequence

import numpy as np

from ..core.errors import MetricError
from ..data.records import AgreementMetrics, AgreementRecord, EpisodeMetrics, ReportRecord
from ..processor.label_builder import LabelSet
from .agreement import RaterMatrix, cronbach_alpha, fleiss_kappa, pairwise_f1
from .ranking import average_precision, rank_correlation

logger = logging.getLogger(__name__)


@dataclass
class EvaluationItem:
    episode_id: str
    shot_scores: np.ndarray
    dialog_scores: np.ndarray
    labels: LabelSet


def _guarded(metric: Callable[[], float], what: str) -> Optional[float]:
    """
    Undefined metrics (no positives, constant vectors) are reported as null
    """
    try:
        return metric()
    except MetricError as exc:
        logger.debug(f"{what} undefined: {exc}")
        return None


def _binarize(values: np.ndarray, threshold: float) -> np.ndarray:
    return (np.asarray(values, dtype=np.float64) >= threshold).astype(np.int64)


def evaluate_episode(item: EvaluationItem, threshold: Optional[float] = None) -> EpisodeMetrics:
    theta = item.labels.binarize_threshold if threshold is None else threshold
    shots, dialogs = np.asarray(item.shot_scores), np.asarray(item.dialog_scores)
    if len(shots) != len(item.labels.shot_scores) or len(dialogs) != len(item.labels.dialog_scores):
        raise MetricError(f"episode {item.episode_id}: score and label lengths differ")

    video_truth = _binarize(item.labels.shot_scores, theta)
    dialog_truth = _binarize(item.labels.dialog_scores, theta)
    name = item.episode_id
    return EpisodeMetrics(
        video_ap=_guarded(lambda: average_precision(shots, video_truth), f"{name} video AP")
        if len(shots) else None,
        dialog_ap=_guarded(lambda: average_precision(dialogs, dialog_truth), f"{name} dialog AP")
        if len(dialogs) else None,
        video_kendall=_guarded(
            lambda: rank_correlation(shots, item.labels.shot_scores, "kendall"), f"{name} Kendall"
        ),
        video_spearman=_guarded(
            lambda: rank_correlation(shots, item.labels.shot_scores, "spearman"), f"{name} Spearman"
        ),
    )


def _macro(per_episode: Sequence[EpisodeMetrics]) -> EpisodeMetrics:
    summary = {}
    for key in EpisodeMetrics.model_fields:
        values = [getattr(m, key) for m in per_episode if getattr(m, key) is not None]
        summary[key] = float(np.mean(values)) if values else None
    return EpisodeMetrics(**summary)


def _pooled(items: Sequence[EvaluationItem], threshold: Optional[float]) -> EpisodeMetrics:
    def theta(item: EvaluationItem) -> float:
        return item.labels.binarize_threshold if threshold is None else threshold

    pooled_labels = LabelSet(
        shot_scores=np.concatenate([i.labels.shot_scores for i in items]),
        dialog_scores=np.concatenate([i.labels.dialog_scores for i in items]),
    )
    video_truth = np.concatenate([_binarize(i.labels.shot_scores, theta(i)) for i in items])
    dialog_truth = np.concatenate([_binarize(i.labels.dialog_scores, theta(i)) for i in items])
    shots = np.concatenate([np.asarray(i.shot_scores) for i in items])
    dialogs = np.concatenate([np.asarray(i.dialog_scores) for i in items])
    return EpisodeMetrics(
        video_ap=_guarded(lambda: average_precision(shots, video_truth), "pooled video AP")
        if len(shots) else None,
        dialog_ap=_guarded(lambda: average_precision(dialogs, dialog_truth), "pooled dialog AP")
        if len(dialogs) else None,
        video_kendall=_guarded(
            lambda: rank_correlation(shots, pooled_labels.shot_scores, "kendall"), "pooled Kendall"
        ),
        video_spearman=_guarded(
            lambda: rank_correlation(shots, pooled_labels.shot_scores, "spearman"), "pooled Spearman"
        ),
    )


def timestamp() -> str:
    return datetime.now(timezone.utc).isoformat()


def build_report(
    items: Sequence[EvaluationItem],
    threshold: Optional[float] = None,
    pooled: bool = False,
    config: Optional[Dict] = None,
    with_timestamp: bool = True,
    agreement: Optional[AgreementRecord] = None,
) -> ReportRecord:
    """
    Per-episode metrics plus a macro (default) or pooled summary
    """
    if not items:
        raise MetricError("nothing to evaluate")
    per_episode = {item.episode_id: evaluate_episode(item, threshold) for item in items}
    used = {
        item.episode_id: item.labels.binarize_threshold if threshold is None else threshold
        for item in items
    }
    common = set(used.values())
    summary = _pooled(items, threshold) if pooled else _macro(list(per_episode.values()))
    logger.info(
        f"Evaluated {len(items)} episodes ({'pooled' if pooled else 'macro'}): "
        f"video AP {summary.video_ap}, dialog AP {summary.dialog_ap}"
    )
    return ReportRecord(
        aggregation="pooled" if pooled else "macro",
        threshold=common.pop() if len(common) == 1 else None,
        episode_thresholds=used,
        episodes=per_episode,
        summary=summary,
        agreement=agreement,
        config=config or {},
        created_at=timestamp() if with_timestamp else None,
    )


def _agreement_block(matrix: Optional[RaterMatrix], modality: str) -> AgreementMetrics:
    if matrix is None or matrix.num_items == 0:
        return AgreementMetrics()
    return AgreementMetrics(
        cronbach_alpha=_guarded(lambda: cronbach_alpha(matrix), f"{modality} Cronbach's alpha"),
        pairwise_f1=_guarded(lambda: pairwise_f1(matrix), f"{modality} pairwise F1"),
        fleiss_kappa=_guarded(lambda: fleiss_kappa(matrix), f"{modality} Fleiss' kappa"),
    )


def agreement_report(
    sources: Sequence[LabelSet],
    names: Optional[Sequence[str]] = None,
    with_timestamp: bool = True,
) -> AgreementRecord:
    """
    Consistency of several label sources over the same episode(s)
    """
    if len(sources) < 2:
        raise MetricError(f"agreement needs at least 2 label sources, got {len(sources)}")
    names = list(names) if names is not None else [f"source{i}" for i in range(len(sources))]
    thresholds = [s.binarize_threshold for s in sources]
    for modality in ("shot_scores", "dialog_scores"):
        lengths = {len(getattr(s, modality)) for s in sources}
        if len(lengths) != 1:
            raise MetricError(f"label sources disagree on the number of {modality}: {sorted(lengths)}")

    video = RaterMatrix(np.stack([s.shot_scores for s in sources]), thresholds)
    dialog = RaterMatrix(np.stack([s.dialog_scores for s in sources]), thresholds)
    return AgreementRecord(
        sources=names,
        video=_agreement_block(video, "video"),
        dialog=_agreement_block(dialog, "dialog"),
        created_at=timestamp() if with_timestamp else None,
    )
