"""
Builds soft story-summarization labels from recap matches
"""
import logging
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np
from pydantic import BaseModel, Field, field_validator

from ..core.errors import LabelError, ShapeError
from .shot_matcher import FrameBank, MatchConfig, MatchResult, binary_labels_from_matches, match_recap

logger = logging.getLogger(__name__)

RECAP_PROVENANCE = "recap"

Span = Tuple[float, float]


class SmoothConfig(BaseModel):
    window: int = Field(17, ge=1)
    kernel: str = "triangle"

    @field_validator("window")
    @classmethod
    def window_is_odd(cls, value: int) -> int:
        if value % 2 == 0:
            raise ValueError(f"smoothing window must be odd, got {value}")
        return value

    @field_validator("kernel")
    @classmethod
    def kernel_is_triangle(cls, value: str) -> str:
        if value != "triangle":
            raise ValueError(f"unsupported smoothing kernel '{value}'")
        return value


@dataclass
class LabelSet:
    shot_scores: np.ndarray
    dialog_scores: np.ndarray
    provenance: str = RECAP_PROVENANCE
    binarize_threshold: float = 0.5
    matches: List[MatchResult] = field(default_factory=list)

    def __post_init__(self):
        self.shot_scores = np.asarray(self.shot_scores, dtype=np.float64)
        self.dialog_scores = np.asarray(self.dialog_scores, dtype=np.float64)
        for name, values in (("shot", self.shot_scores), ("dialog", self.dialog_scores)):
            if values.size and (values.min() < 0.0 or values.max() > 1.0):
                raise LabelError(f"{name} scores must lie in [0, 1]")

    def binary_shots(self) -> np.ndarray:
        return (self.shot_scores >= self.binarize_threshold).astype(np.int64)

    def binary_dialogs(self) -> np.ndarray:
        return (self.dialog_scores >= self.binarize_threshold).astype(np.int64)


def triangle_kernel(window: int) -> np.ndarray:
    """
    k(d) = 1 - |d| / (h + 1) for |d| <= h, h = (window - 1) / 2
    """
    half = (window - 1) // 2
    offsets = np.arange(-half, half + 1, dtype=np.float64)
    return 1.0 - np.abs(offsets) / (half + 1)


def triangle_smooth(binary: np.ndarray, cfg: Optional[SmoothConfig] = None) -> np.ndarray:
    """
    Spread each positive with a triangle, add overlapping triangles, clip at 1
    """
    cfg = cfg or SmoothConfig()
    binary = np.asarray(binary, dtype=np.float64)
    if binary.size == 0:
        return binary.copy()
    if not np.isin(binary, (0.0, 1.0)).all():
        raise LabelError("triangle smoothing expects a 0/1 vector")
    kernel = triangle_kernel(cfg.window)
    spread = np.convolve(binary, kernel, mode="full")
    half = (cfg.window - 1) // 2
    spread = spread[half : half + len(binary)]
    return np.minimum(1.0, spread)


def inherit_dialog_labels(
    shot_scores: np.ndarray,
    shot_spans: Sequence[Span],
    utterance_spans: Sequence[Span],
) -> np.ndarray:
    """
    Each utterance takes the score of the shot containing its mid-timestamp.

    Shot spans are half-open [start, end); a mid-time in a gap goes to the shot
    with the nearest boundary, the earlier shot on ties.
    """
    if len(shot_spans) == 0:
        raise LabelError("cannot inherit dialog labels from an episode without shots")
    shot_scores = np.asarray(shot_scores, dtype=np.float64)
    if len(shot_scores) != len(shot_spans):
        raise ShapeError(f"{len(shot_scores)} shot scores for {len(shot_spans)} shot spans")

    starts = np.array([s for s, _ in shot_spans], dtype=np.float64)
    ends = np.array([e for _, e in shot_spans], dtype=np.float64)
    inherited = np.zeros(len(utterance_spans), dtype=np.float64)

    for l, (start, end) in enumerate(utterance_spans):
        mid = (start + end) / 2.0
        i = int(np.searchsorted(starts, mid, side="right")) - 1
        if i >= 0 and mid < ends[i]:
            inherited[l] = shot_scores[i]
            continue
        if i < 0:
            owner = 0
        elif i == len(starts) - 1:
            owner = i
        else:
            # gap between shot i and shot i + 1
            owner = i if mid - ends[i] <= starts[i + 1] - mid else i + 1
        inherited[l] = shot_scores[owner]
    return inherited


def labels_from_recap(
    episode: FrameBank,
    shot_spans: Sequence[Span],
    utterance_spans: Sequence[Span],
    recap: FrameBank,
    match_cfg: Optional[MatchConfig] = None,
    smooth_cfg: Optional[SmoothConfig] = None,
) -> LabelSet:
    """
    match -> binary -> triangle smoothing -> dialog inheritance
    """
    match_cfg = match_cfg or MatchConfig()
    smooth_cfg = smooth_cfg or SmoothConfig()
    if episode.num_shots != len(shot_spans):
        raise ShapeError(f"{episode.num_shots} shots in the frame bank, {len(shot_spans)} spans")

    results = match_recap(recap, episode, match_cfg)
    labels = labels_from_matches(results, shot_spans, utterance_spans, smooth_cfg)
    labels.matches = results
    return labels


def labels_from_matches(
    results: Sequence[MatchResult],
    shot_spans: Sequence[Span],
    utterance_spans: Sequence[Span],
    smooth_cfg: Optional[SmoothConfig] = None,
) -> LabelSet:
    binary = binary_labels_from_matches(results, len(shot_spans))
    shot_scores = triangle_smooth(binary, smooth_cfg)
    dialog_scores = (
        inherit_dialog_labels(shot_scores, shot_spans, utterance_spans)
        if len(utterance_spans)
        else np.zeros(0)
    )
    logger.info(
        f"Recap labels: {int(binary.sum())} matched shots, "
        f"{int((shot_scores > 0).sum())} shots with non-zero importance"
    )
    return LabelSet(shot_scores, dialog_scores, provenance=RECAP_PROVENANCE)
