from dataclasses import dataclass, field
from typing import List, Optional, Tuple

import torch

from ..core.errors import ShapeError


@dataclass
class ShotFeatures:
    frames: List[torch.Tensor]  # one (T_i, D^k_S) matrix per backbone
    start: float
    end: float
    validity: Optional[torch.Tensor] = None
    shot_id: str = ""

    @property
    def num_frames(self) -> int:
        return int(self.frames[0].shape[0])

    @property
    def mid(self) -> float:
        return (self.start + self.end) / 2.0


@dataclass
class UtteranceFeatures:
    tokens: torch.Tensor  # (T_l, D_U)
    start: float
    end: float
    utterance_id: str = ""

    @property
    def mid(self) -> float:
        return (self.start + self.end) / 2.0


@dataclass
class EpisodeFeatures:
    """
    Precomputed backbone features of one episode
    """

    episode_id: str
    shots: List[ShotFeatures]
    utterances: List[UtteranceFeatures] = field(default_factory=list)
    duration: float = 0.0

    def __post_init__(self):
        if not self.shots:
            raise ShapeError(f"episode {self.episode_id} has no shots")
        widths = [tuple(f.shape[1] for f in shot.frames) for shot in self.shots]
        if len(set(widths)) > 1:
            raise ShapeError(f"episode {self.episode_id}: inconsistent backbone widths across shots")
        for i, shot in enumerate(self.shots):
            lengths = {int(f.shape[0]) for f in shot.frames}
            if len(lengths) != 1 or shot.num_frames < 1:
                raise ShapeError(
                    f"episode {self.episode_id}, shot {i}: backbones disagree on frame count {sorted(lengths)}"
                )
        if self.utterances:
            widths = {int(u.tokens.shape[1]) for u in self.utterances}
            if len(widths) > 1:
                raise ShapeError(f"episode {self.episode_id}: inconsistent utterance widths {sorted(widths)}")
        last_end = max(
            [s.end for s in self.shots] + [u.end for u in self.utterances], default=0.0
        )
        if self.duration <= 0.0:
            self.duration = last_end
        elif self.duration < last_end:
            raise ShapeError(
                f"episode {self.episode_id}: duration {self.duration}s ends before the last element ({last_end}s)"
            )

    @property
    def num_shots(self) -> int:
        return len(self.shots)

    @property
    def num_utterances(self) -> int:
        return len(self.utterances)

    def shot_spans(self) -> List[Tuple[float, float]]:
        return [(s.start, s.end) for s in self.shots]

    def utterance_spans(self) -> List[Tuple[float, float]]:
        return [(u.start, u.end) for u in self.utterances]

    def backbone_dims(self) -> List[int]:
        return [int(f.shape[1]) for f in self.shots[0].frames] if self.shots else []

    def utterance_dim(self) -> Optional[int]:
        return int(self.utterances[0].tokens.shape[1]) if self.utterances else None
