"""
Recap-to-episode shot matching on frame embeddings
"""
import logging
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence

import numpy as np
from pydantic import BaseModel, Field

from ..core.errors import ShapeError

logger = logging.getLogger(__name__)

INVALID_SIMILARITY = -2.0


class MatchConfig(BaseModel):
    sim_threshold: float = Field(0.85, gt=0, le=1)
    top_k: int = Field(3, ge=1)
    window_radius: int = Field(10, ge=0)
    max_rounds: int = Field(64, ge=1)


@dataclass
class FrameBank:
    """
    Frame embeddings per shot, with a validity flag per frame
    """

    frames: List[np.ndarray]
    validity: List[np.ndarray] = field(default_factory=list)

    def __post_init__(self):
        if not self.validity:
            self.validity = [np.ones(len(f), dtype=bool) for f in self.frames]
        if len(self.validity) != len(self.frames):
            raise ShapeError(
                f"{len(self.frames)} shots but {len(self.validity)} validity masks"
            )
        dims = {f.shape[1] for f in self.frames if f.ndim == 2}
        if len(dims) > 1:
            raise ShapeError(f"frame embeddings of mixed widths in one bank: {sorted(dims)}")
        for i, (frames, valid) in enumerate(zip(self.frames, self.validity)):
            if frames.ndim != 2 or len(valid) != len(frames):
                raise ShapeError(
                    f"shot {i}: frames {frames.shape} do not match validity of length {len(valid)}"
                )

    @property
    def num_shots(self) -> int:
        return len(self.frames)

    def stacked(self):
        """
        All frames as one matrix, plus owning shot index and validity per row
        """
        matrix = np.concatenate(self.frames, axis=0)
        owners = np.concatenate(
            [np.full(len(f), i, dtype=np.int64) for i, f in enumerate(self.frames)]
        )
        validity = np.concatenate(self.validity).astype(bool)
        return matrix, owners, validity


@dataclass
class MatchResult:
    """
    Matching outcome for one recap shot
    """

    recap_shot: int
    candidates: List[int]
    scores: Dict[int, float]
    best_shot: Optional[int]
    matched: List[int]
    rounds: int = 0
    hit_max_rounds: bool = False


def cosine_similarity_matrix(
    a: np.ndarray,
    b: np.ndarray,
    a_valid: Optional[np.ndarray] = None,
    b_valid: Optional[np.ndarray] = None,
) -> np.ndarray:
    """
    Pairwise cosine similarity; pairs touching an invalid frame get -2
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape[1] != b.shape[1]:
        raise ShapeError(f"embedding widths differ: {a.shape[1]} vs {b.shape[1]}")
    a_valid = np.ones(len(a), dtype=bool) if a_valid is None else np.asarray(a_valid, bool)
    b_valid = np.ones(len(b), dtype=bool) if b_valid is None else np.asarray(b_valid, bool)

    a_norm = np.linalg.norm(a, axis=1)
    b_norm = np.linalg.norm(b, axis=1)
    for side, norms, valid in (("left", a_norm, a_valid), ("right", b_norm, b_valid)):
        zero = np.nonzero(valid & (norms == 0.0))[0]
        if len(zero):
            raise ShapeError(f"zero-norm valid frame on the {side} side at row {int(zero[0])}")

    safe_a = np.where(a_norm > 0, a_norm, 1.0)
    safe_b = np.where(b_norm > 0, b_norm, 1.0)
    sims = (a / safe_a[:, None]) @ (b / safe_b[:, None]).T
    sims = np.clip(sims, -1.0, 1.0)
    sims[~a_valid, :] = INVALID_SIMILARITY
    sims[:, ~b_valid] = INVALID_SIMILARITY
    return sims


def windowed_closure(
    best_shot: int, candidates: Sequence[int], radius: int, max_rounds: int
):
    """
    Grow {best_shot} with candidates lying within radius of any member until nothing changes
    """
    members = {best_shot}
    remaining = set(candidates) - members
    rounds = 0
    while remaining:
        added = {c for c in remaining if any(abs(c - m) <= radius for m in members)}
        if not added:
            break
        if rounds >= max_rounds:
            return sorted(members), rounds, True
        members |= added
        remaining -= added
        rounds += 1
    return sorted(members), rounds, False


def match_recap_shot(
    recap_frames: np.ndarray,
    episode: FrameBank,
    cfg: MatchConfig,
    recap_valid: Optional[np.ndarray] = None,
    recap_shot: int = 0,
) -> MatchResult:
    """
    Match one recap shot against every episode frame.

    1. candidates: shots owning a frame with similarity >= threshold to any recap frame
    2. scoring: per recap frame, its top_k passing frames; max similarity per shot; summed
    3. best shot: highest accumulated score, lowest index on ties
    4. closure: grow the matched set around the best shot within window_radius
    """
    matrix, owners, valid = episode.stacked()
    sims = cosine_similarity_matrix(recap_frames, matrix, recap_valid, valid)
    passing = sims >= cfg.sim_threshold

    candidates = sorted({int(s) for s in owners[passing.any(axis=0)]})
    if not candidates:
        logger.debug(f"recap shot {recap_shot}: no frame above {cfg.sim_threshold}")
        return MatchResult(recap_shot, [], {}, None, [])

    scores: Dict[int, float] = {}
    for r in range(sims.shape[0]):
        hits = np.nonzero(passing[r])[0]
        if len(hits) == 0:
            continue
        order = np.argsort(-sims[r, hits], kind="stable")[: cfg.top_k]
        per_shot: Dict[int, float] = {}
        for column in hits[order]:
            shot = int(owners[column])
            per_shot[shot] = max(per_shot.get(shot, -np.inf), float(sims[r, column]))
        for shot, best in per_shot.items():
            scores[shot] = scores.get(shot, 0.0) + best

    best_shot = min(scores, key=lambda s: (-scores[s], s))
    matched, rounds, capped = windowed_closure(
        best_shot, candidates, cfg.window_radius, cfg.max_rounds
    )
    if capped:
        logger.warning(
            f"recap shot {recap_shot}: closure stopped after {cfg.max_rounds} rounds"
        )
    return MatchResult(
        recap_shot=recap_shot,
        candidates=candidates,
        scores=dict(sorted(scores.items())),
        best_shot=best_shot,
        matched=matched,
        rounds=rounds,
        hit_max_rounds=capped,
    )


def match_recap(recap: FrameBank, episode: FrameBank, cfg: MatchConfig) -> List[MatchResult]:
    """
    Match every recap shot independently
    """
    results = []
    for s, (frames, valid) in enumerate(zip(recap.frames, recap.validity)):
        results.append(match_recap_shot(frames, episode, cfg, valid, recap_shot=s))
    matched = sum(1 for r in results if r.matched)
    logger.info(f"Matched {matched}/{recap.num_shots} recap shots to the episode")
    return results


def binary_labels_from_matches(results: Sequence[MatchResult], num_shots: int) -> np.ndarray:
    labels = np.zeros(num_shots, dtype=np.float64)
    for result in results:
        for shot in result.matched:
            if not 0 <= shot < num_shots:
                raise ShapeError(f"matched shot {shot} outside episode of {num_shots} shots")
            labels[shot] = 1.0
    return labels
