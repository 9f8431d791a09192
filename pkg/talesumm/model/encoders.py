"""
Level-1 encoders: frame fusion + shot transformer, and utterance mean pooling
"""
import logging
from typing import List, Optional, Sequence, Tuple

import torch
import torch.nn as nn

from ..core.errors import ShapeError
from ..core.layers import TransformerEncoder
from ..core.tensor_ops import dropout, sinusoidal_encoding
from .config import TaleSummConfig

logger = logging.getLogger(__name__)


def sample_frames(
    num_frames: int,
    train: bool,
    cap: int = 25,
    generator: Optional[torch.Generator] = None,
) -> List[int]:
    """
    Frame indices for one shot: random subset while training, evenly spaced otherwise.

    Evenly spaced positions j * (T - 1) / (cap - 1) round half up, so T = 50
    picks frame 25 for j = 12.
    """
    if num_frames < 1:
        raise ShapeError("a shot needs at least one frame")
    if num_frames <= cap:
        return list(range(num_frames))
    if train:
        picked = torch.randperm(num_frames, generator=generator)[:cap]
        return sorted(int(i) for i in picked)
    if cap == 1:
        return [0]
    span, gaps = num_frames - 1, cap - 1
    return [(2 * j * span + gaps) // (2 * gaps) for j in range(cap)]


def pad_sequences(sequences: Sequence[torch.Tensor]) -> Tuple[torch.Tensor, torch.Tensor]:
    """
    Stack (T_i, D) matrices into (B, T_max, D) with zero padding, plus lengths
    """
    lengths = torch.tensor([int(s.shape[0]) for s in sequences], dtype=torch.long)
    longest = int(lengths.max())
    width = int(sequences[0].shape[1])
    padded = sequences[0].new_zeros((len(sequences), longest, width))
    for i, seq in enumerate(sequences):
        padded[i, : seq.shape[0]] = seq
    return padded, lengths


class FrameFusion(nn.Module):
    """
    Projects each backbone's frame feature to D and fuses them with learned weights
    """

    def __init__(self, config: TaleSummConfig):
        super().__init__()
        self.mode = config.fusion
        self.proj_dropout = config.dropout.proj
        self.backbones = list(config.backbones)
        self.input_dims = [config.backbone_dims[b] for b in self.backbones]
        self.projections = nn.ModuleList(
            [nn.Linear(dim, config.d_model) for dim in self.input_dims]
        )
        count = len(self.backbones)
        if self.mode == "attention":
            self.scorer = nn.Linear(count * config.d_model, count)
        elif self.mode == "stack":
            self.scorer = nn.Linear(config.d_model, 1)
        else:
            self.scorer = None

    def forward(
        self,
        features: Sequence[torch.Tensor],
        train: bool = False,
        generator: Optional[torch.Generator] = None,
    ) -> Tuple[torch.Tensor, Optional[torch.Tensor]]:
        """
        features: one (..., D^k_S) tensor per selected backbone -> ((..., D), alpha or None)
        """
        if len(features) != len(self.projections):
            raise ShapeError(
                f"expected {len(self.projections)} backbone features, got {len(features)}"
            )
        projected = []
        for k, (feature, linear) in enumerate(zip(features, self.projections)):
            if feature.shape[-1] != linear.in_features:
                raise ShapeError(
                    f"backbone {self.backbones[k]}: feature width {feature.shape[-1]}, "
                    f"expected {linear.in_features}"
                )
            projected.append(dropout(linear(feature), self.proj_dropout, train, generator))
        blocks = torch.stack(projected, dim=-2)  # (..., K, D)

        if self.mode == "avg":
            return blocks.mean(dim=-2), None
        if self.mode == "max":
            return blocks.max(dim=-2).values, None
        if self.mode == "attention":
            logits = self.scorer(torch.cat(projected, dim=-1))
        else:
            logits = self.scorer(blocks).squeeze(-1)
        alpha = torch.softmax(torch.tanh(logits), dim=-1)
        return (alpha.unsqueeze(-1) * blocks).sum(dim=-2), alpha


class ShotEncoder(nn.Module):
    """
    Fused frame sequence + frame position encoding, CLS-pooled by a shot transformer
    """

    def __init__(self, config: TaleSummConfig):
        super().__init__()
        self.frame_cap = config.frame_cap
        self.fusion = FrameFusion(config)
        bound = config.d_model ** -0.5
        self.cls_token = nn.Parameter(torch.empty(config.d_model).uniform_(-bound, bound))
        self.encoder = TransformerEncoder(
            config.d_model, config.heads, config.shot_layers, config.dropout.attn
        )
        self.register_buffer(
            "frame_positions", sinusoidal_encoding(config.frame_cap, config.d_model)
        )

    def forward(
        self,
        frames: Sequence[torch.Tensor],
        lengths: torch.Tensor,
        train: bool = False,
        generator: Optional[torch.Generator] = None,
    ) -> torch.Tensor:
        """
        frames: one padded (N, T_max, D^k_S) tensor per backbone; lengths: (N,) -> (N, D)
        """
        if (lengths < 1).any():
            raise ShapeError("cannot encode a shot with zero frames")
        longest = int(frames[0].shape[1])
        if longest > self.frame_cap:
            raise ShapeError(f"{longest} frames exceed the frame cap of {self.frame_cap}")

        fused, _ = self.fusion(frames, train, generator)
        fused = fused + self.frame_positions[:longest]
        count = fused.shape[0]
        cls = self.cls_token.expand(count, 1, -1)
        sequence = torch.cat([cls, fused], dim=1)

        valid = torch.arange(longest).unsqueeze(0) < lengths.unsqueeze(1)
        keys = torch.cat([torch.ones(count, 1, dtype=torch.bool), valid], dim=1)
        eye = torch.eye(longest + 1, dtype=torch.bool).unsqueeze(0)
        mask = keys.unsqueeze(1) | eye

        encoded = self.encoder(sequence, mask, train, generator)
        return encoded[:, 0]


class UtteranceEncoder(nn.Module):
    """
    Linear projection of contextual word features, mean-pooled over tokens
    """

    def __init__(self, config: TaleSummConfig):
        super().__init__()
        self.projection = nn.Linear(config.utterance_dim, config.d_model)
        self.proj_dropout = config.dropout.proj

    def forward(
        self,
        tokens: torch.Tensor,
        lengths: torch.Tensor,
        train: bool = False,
        generator: Optional[torch.Generator] = None,
    ) -> torch.Tensor:
        """
        tokens: (M, T_max, D_U) zero-padded; lengths: (M,) -> (M, D)
        """
        if (lengths < 1).any():
            raise ShapeError("cannot encode an utterance with zero tokens")
        if tokens.shape[-1] != self.projection.in_features:
            raise ShapeError(
                f"utterance width {tokens.shape[-1]}, expected {self.projection.in_features}"
            )
        projected = dropout(self.projection(tokens), self.proj_dropout, train, generator)
        valid = (torch.arange(tokens.shape[1]).unsqueeze(0) < lengths.unsqueeze(1)).to(projected.dtype)
        summed = (projected * valid.unsqueeze(-1)).sum(dim=1)
        return summed / lengths.to(projected.dtype).unsqueeze(-1)


def fuse_frame_features(
    features: Sequence[torch.Tensor],
    fusion: FrameFusion,
    train: bool = False,
    generator: Optional[torch.Generator] = None,
) -> Tuple[torch.Tensor, Optional[torch.Tensor]]:
    return fusion(features, train, generator)


def encode_shot(
    frames: Sequence[torch.Tensor],
    encoder: ShotEncoder,
    train: bool = False,
    generator: Optional[torch.Generator] = None,
) -> torch.Tensor:
    """
    Single shot: one (T, D^k_S) matrix per selected backbone -> (D,)
    """
    if frames[0].shape[0] < 1:
        raise ShapeError("cannot encode a shot with zero frames")
    batched = [f.unsqueeze(0) for f in frames]
    lengths = torch.tensor([int(frames[0].shape[0])])
    return encoder(batched, lengths, train, generator)[0]


def encode_utterance(
    tokens: torch.Tensor,
    encoder: UtteranceEncoder,
    train: bool = False,
    generator: Optional[torch.Generator] = None,
) -> torch.Tensor:
    if tokens.shape[0] < 1:
        raise ShapeError("cannot encode an utterance with zero tokens")
    lengths = torch.tensor([int(tokens.shape[0])])
    return encoder(tokens.unsqueeze(0), lengths, train, generator)[0]
