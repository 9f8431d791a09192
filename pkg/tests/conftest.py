import sys
from pathlib import Path
from typing import List, Optional

import pytest
import torch

# Add the repo root to the Python path
sys.path.insert(0, str(Path(__file__).parent.parent))

from talesumm.model.config import DropoutConfig, TaleSummConfig  # noqa: E402
from talesumm.model.features import EpisodeFeatures, ShotFeatures, UtteranceFeatures  # noqa: E402

TINY_BACKBONES = [6, 5, 4]
TINY_UTTERANCE_DIM = 7


def tiny_config(**overrides) -> TaleSummConfig:
    values = dict(
        d_model=8,
        heads=1,
        shot_layers=1,
        episode_layers=1,
        group_size=3,
        frame_cap=5,
        dropout=DropoutConfig(proj=0.0, attn=0.0, head=0.0),
        backbone_dims=list(TINY_BACKBONES),
        utterance_dim=TINY_UTTERANCE_DIM,
        max_duration=200.0,
        max_groups=16,
    )
    values.update(overrides)
    return TaleSummConfig(**values)


def random_episode(
    num_shots: int = 4,
    num_utterances: int = 3,
    seed: int = 0,
    dtype: torch.dtype = torch.float32,
    backbones: Optional[List[int]] = None,
    utterance_dim: int = TINY_UTTERANCE_DIM,
    shot_length: float = 2.0,
    frames: int = 3,
    episode_id: str = "ep",
) -> EpisodeFeatures:
    generator = torch.Generator().manual_seed(seed)
    dims = backbones or TINY_BACKBONES
    shots = [
        ShotFeatures(
            [torch.randn(frames, d, generator=generator, dtype=dtype) for d in dims],
            i * shot_length,
            (i + 1) * shot_length,
            shot_id=f"s{i}",
        )
        for i in range(num_shots)
    ]
    total = num_shots * shot_length
    slot = total / max(1, num_utterances)
    utterances = [
        UtteranceFeatures(
            torch.randn(2 + l % 3, utterance_dim, generator=generator, dtype=dtype),
            l * slot + 0.25 * slot,
            (l + 0.75) * slot,
            utterance_id=f"u{l}",
        )
        for l in range(num_utterances)
    ]
    return EpisodeFeatures(episode_id, shots, utterances, total)


@pytest.fixture
def config() -> TaleSummConfig:
    return tiny_config()


@pytest.fixture
def episode() -> EpisodeFeatures:
    return random_episode()
