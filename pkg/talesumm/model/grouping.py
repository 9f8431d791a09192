"""
Local story groups: time-ordered interleaving of shot and dialog tokens, group
token slots, and the episode-level attention mask
"""
import logging
from dataclasses import dataclass
from typing import List, Sequence, Tuple

import torch

from ..core.errors import ShapeError

logger = logging.getLogger(__name__)

SHOT = "shot"
DIALOG = "dialog"
_MODALITY_ORDER = {SHOT: 0, DIALOG: 1}


@dataclass(frozen=True)
class Token:
    modality: str
    index: int
    mid: float


@dataclass
class GroupPartition:
    tokens: List[Token]  # the S content tokens in sequence order
    block_sizes: List[int]  # content tokens per block, before group slots
    group_indicator: List[int]  # o, length S_hat
    positions: List[int]  # slot in the S_hat sequence of each content token
    token_groups: List[int]  # block index of each content token

    @property
    def num_tokens(self) -> int:
        return len(self.tokens)

    @property
    def num_groups(self) -> int:
        return len(self.block_sizes)

    @property
    def sequence_length(self) -> int:
        return len(self.group_indicator)

    def group_slots(self) -> List[int]:
        return [i for i, flag in enumerate(self.group_indicator) if flag]

    def slot_groups(self) -> List[int]:
        """
        Block index of every slot in the S_hat sequence
        """
        groups = [0] * self.sequence_length
        for position, group in zip(self.positions, self.token_groups):
            groups[position] = group
        for group, slot in enumerate(self.group_slots()):
            groups[slot] = group
        return groups

    def positions_of(self, modality: str) -> List[int]:
        picked = sorted(
            (token.index, position)
            for token, position in zip(self.tokens, self.positions)
            if token.modality == modality
        )
        return [position for _, position in picked]


def build_group_partition(
    shot_spans: Sequence[Tuple[float, float]],
    utterance_spans: Sequence[Tuple[float, float]],
    group_size: int,
    use_group_tokens: bool = True,
) -> GroupPartition:
    """
    Sort tokens by mid-time (shot before dialog, then index), cut them into
    consecutive blocks of group_size, and append a group slot to each block
    """
    if group_size < 2:
        raise ShapeError(f"group size must be at least 2, got {group_size}")
    tokens = [Token(SHOT, i, (s + e) / 2.0) for i, (s, e) in enumerate(shot_spans)]
    tokens += [Token(DIALOG, l, (s + e) / 2.0) for l, (s, e) in enumerate(utterance_spans)]
    if not tokens:
        raise ShapeError("cannot partition an episode without shot or dialog tokens")
    tokens.sort(key=lambda t: (t.mid, _MODALITY_ORDER[t.modality], t.index))

    block_sizes = [
        min(group_size, len(tokens) - start) for start in range(0, len(tokens), group_size)
    ]
    indicator: List[int] = []
    positions: List[int] = []
    token_groups: List[int] = []
    for group, size in enumerate(block_sizes):
        for _ in range(size):
            positions.append(len(indicator))
            token_groups.append(group)
            indicator.append(0)
        if use_group_tokens:
            indicator.append(1)

    logger.debug(
        f"Partitioned {len(tokens)} tokens into {len(block_sizes)} groups of up to {group_size}"
    )
    return GroupPartition(tokens, block_sizes, indicator, positions, token_groups)


def build_attention_mask(
    partition: GroupPartition,
    attention: str = "grouped",
    link_group_tokens: bool = True,
) -> torch.Tensor:
    """
    A_hat = blockdiag(1) OR o o^T over the S_hat sequence, as a bool matrix
    """
    length = partition.sequence_length
    if attention == "full":
        return torch.ones(length, length, dtype=torch.bool)
    if attention != "grouped":
        raise ValueError(f"unknown attention pattern '{attention}'")

    groups = torch.tensor(partition.slot_groups())
    mask = groups.unsqueeze(0) == groups.unsqueeze(1)
    if link_group_tokens:
        indicator = torch.tensor(partition.group_indicator, dtype=torch.bool)
        mask = mask | (indicator.unsqueeze(0) & indicator.unsqueeze(1))
    return mask
