"""
The two-level story summarization network.

Level 1 turns every shot into a vector (frame fusion + shot transformer) and
every utterance into a vector (projection + mean pool). Level 2 interleaves
those vectors in time, cuts them into local story groups, adds one group token
per group and runs a masked transformer over the whole episode.
"""
import logging
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import torch
import torch.nn as nn

from ..core.errors import ConfigMismatchError, ShapeError
from ..core.layers import TransformerEncoder
from ..core.tensor_ops import dropout, sinusoidal_encoding
from .config import TaleSummConfig
from .encoders import ShotEncoder, UtteranceEncoder, pad_sequences, sample_frames
from .features import EpisodeFeatures
from .grouping import DIALOG, SHOT, GroupPartition, build_attention_mask, build_group_partition

logger = logging.getLogger(__name__)


@dataclass
class EpisodeScores:
    shot_scores: torch.Tensor  # (N,)
    dialog_scores: torch.Tensor  # (M,)


@dataclass
class _PreparedEpisode:
    partition: GroupPartition
    shot_frames: List[List[torch.Tensor]]  # per shot, per selected backbone
    utterance_tokens: List[torch.Tensor]
    num_shots: int
    num_utterances: int


class TaleSumm(nn.Module):
    def __init__(self, config: TaleSummConfig):
        super().__init__()
        self.config = config
        dim = config.d_model
        bound = dim ** -0.5

        self.shot_encoder = ShotEncoder(config) if config.uses_video else None
        self.utterance_encoder = UtteranceEncoder(config) if config.uses_dialog else None

        self.type_embedding = nn.Parameter(torch.empty(2, dim).uniform_(-bound, bound))
        self.group_embedding = nn.Parameter(
            torch.empty(config.max_groups, dim).uniform_(-bound, bound)
        )
        self.group_query = nn.Parameter(torch.empty(dim).uniform_(-bound, bound))
        # frozen Fourier time table
        self.register_buffer("time_embedding", sinusoidal_encoding(config.time_bins, dim))

        self.input_norm = nn.LayerNorm(dim)
        self.episode_encoder = TransformerEncoder(
            dim, config.heads, config.episode_layers, config.dropout.attn
        )
        self.classifier = nn.Linear(dim, 1)

    # ------------------------------------------------------------------
    # preparation
    # ------------------------------------------------------------------
    def check_features(self, episode: EpisodeFeatures) -> None:
        cfg = self.config
        if cfg.uses_video and episode.backbone_dims() != list(cfg.backbone_dims):
            raise ConfigMismatchError(
                f"episode {episode.episode_id}: backbone dims {episode.backbone_dims()} "
                f"do not match the model's {cfg.backbone_dims}"
            )
        utterance_dim = episode.utterance_dim()
        if cfg.uses_dialog and utterance_dim is not None and utterance_dim != cfg.utterance_dim:
            raise ConfigMismatchError(
                f"episode {episode.episode_id}: utterance dim {utterance_dim} "
                f"does not match the model's {cfg.utterance_dim}"
            )

    def prepare(
        self,
        episode: EpisodeFeatures,
        train: bool = False,
        generator: Optional[torch.Generator] = None,
    ) -> _PreparedEpisode:
        """
        Frame sampling, modality selection and the group partition of one episode
        """
        cfg = self.config
        self.check_features(episode)

        shot_frames: List[List[torch.Tensor]] = []
        if cfg.uses_video:
            for i, shot in enumerate(episode.shots):
                available = torch.arange(shot.num_frames)
                if shot.validity is not None:
                    available = torch.nonzero(shot.validity.bool()).flatten()
                    if available.numel() == 0:
                        raise ShapeError(
                            f"episode {episode.episode_id}, shot {i}: no valid frames"
                        )
                picked = available[sample_frames(int(available.numel()), train, cfg.frame_cap, generator)]
                shot_frames.append([shot.frames[b][picked] for b in cfg.backbones])

        utterance_tokens = (
            [u.tokens for u in episode.utterances] if cfg.uses_dialog else []
        )
        shot_spans = episode.shot_spans() if cfg.uses_video else []
        utterance_spans = episode.utterance_spans() if cfg.uses_dialog else []
        partition = build_group_partition(
            shot_spans, utterance_spans, cfg.group_size, cfg.use_group_tokens
        )
        if partition.num_groups > cfg.max_groups:
            raise ShapeError(
                f"episode {episode.episode_id} needs {partition.num_groups} groups, "
                f"more than the {cfg.max_groups} group embeddings"
            )
        return _PreparedEpisode(
            partition, shot_frames, utterance_tokens, len(shot_spans), len(utterance_spans)
        )

    # ------------------------------------------------------------------
    # level 1
    # ------------------------------------------------------------------
    def encode_shots(
        self,
        shot_frames: Sequence[Sequence[torch.Tensor]],
        train: bool = False,
        generator: Optional[torch.Generator] = None,
    ) -> torch.Tensor:
        if not shot_frames:
            return self.type_embedding.new_zeros((0, self.config.d_model))
        padded = []
        lengths = None
        for k in range(len(shot_frames[0])):
            block, lengths = pad_sequences([frames[k] for frames in shot_frames])
            padded.append(block.to(self.type_embedding.dtype))
        return self.shot_encoder(padded, lengths, train, generator)

    def encode_utterances(
        self,
        utterance_tokens: Sequence[torch.Tensor],
        train: bool = False,
        generator: Optional[torch.Generator] = None,
    ) -> torch.Tensor:
        if not utterance_tokens:
            return self.type_embedding.new_zeros((0, self.config.d_model))
        padded, lengths = pad_sequences(utterance_tokens)
        return self.utterance_encoder(
            padded.to(self.type_embedding.dtype), lengths, train, generator
        )

    # ------------------------------------------------------------------
    # level 2
    # ------------------------------------------------------------------
    def time_bins_of(self, partition: GroupPartition) -> torch.Tensor:
        bins = []
        rows = self.time_embedding.shape[0]
        for token in partition.tokens:
            b = int(token.mid // self.config.time_bin)
            if not 0 <= b < rows:
                raise ShapeError(
                    f"{token.modality} {token.index} at {token.mid:.2f}s falls in time bin {b}, "
                    f"outside the {rows}-row time table"
                )
            bins.append(b)
        return torch.tensor(bins, dtype=torch.long)

    def assemble_tokens(
        self,
        shot_vectors: torch.Tensor,
        utterance_vectors: torch.Tensor,
        partition: GroupPartition,
    ) -> torch.Tensor:
        """
        (N, D) shots + (M, D) utterances -> layer-normed (S_hat, D) episode sequence
        """
        num_shots = shot_vectors.shape[0]
        if partition.num_groups > self.group_embedding.shape[0]:
            raise ShapeError(
                f"{partition.num_groups} groups exceed the {self.group_embedding.shape[0]} group embeddings"
            )
        content_rows = torch.cat([shot_vectors, utterance_vectors], dim=0)
        order = torch.tensor(
            [t.index if t.modality == SHOT else num_shots + t.index for t in partition.tokens],
            dtype=torch.long,
        )
        types = torch.tensor(
            [0 if t.modality == SHOT else 1 for t in partition.tokens], dtype=torch.long
        )
        groups = torch.tensor(partition.token_groups, dtype=torch.long)
        content = (
            content_rows[order]
            + self.type_embedding[types]
            + self.time_embedding[self.time_bins_of(partition)]
            + self.group_embedding[groups]
        )

        sequence = content.new_zeros((partition.sequence_length, content.shape[1]))
        sequence = sequence.index_copy(0, torch.tensor(partition.positions, dtype=torch.long), content)
        slots = partition.group_slots()
        if slots:
            group_rows = self.group_query + self.group_embedding[: len(slots)]
            sequence = sequence.index_copy(0, torch.tensor(slots, dtype=torch.long), group_rows)
        return self.input_norm(sequence)

    def forward(
        self,
        episodes: Sequence[EpisodeFeatures],
        train: bool = False,
        generator: Optional[torch.Generator] = None,
    ) -> List[EpisodeScores]:
        """
        Batched forward: sequences are padded to the longest episode, padding is
        invisible to real tokens and never scored
        """
        cfg = self.config
        prepared = [self.prepare(ep, train, generator) for ep in episodes]

        # 1. level-1 encoders over every shot / utterance of the batch at once
        all_shots = [frames for p in prepared for frames in p.shot_frames]
        all_utterances = [tokens for p in prepared for tokens in p.utterance_tokens]
        shot_vectors = self.encode_shots(all_shots, train, generator)
        utterance_vectors = self.encode_utterances(all_utterances, train, generator)

        # 2. per-episode sequences and masks
        sequences, masks = [], []
        shot_offset = utterance_offset = 0
        for p in prepared:
            shots = shot_vectors[shot_offset : shot_offset + p.num_shots]
            utterances = utterance_vectors[utterance_offset : utterance_offset + p.num_utterances]
            shot_offset += p.num_shots
            utterance_offset += p.num_utterances
            sequences.append(self.assemble_tokens(shots, utterances, p.partition))
            masks.append(
                build_attention_mask(p.partition, cfg.attention, cfg.link_group_tokens)
            )

        # 3. pad to the batch max; padded rows only see themselves
        longest = max(s.shape[0] for s in sequences)
        batch = torch.stack(
            [torch.cat([s, s.new_zeros((longest - s.shape[0], cfg.d_model))]) for s in sequences]
        )
        batch_mask = torch.eye(longest, dtype=torch.bool).repeat(len(sequences), 1, 1)
        for b, mask in enumerate(masks):
            length = mask.shape[0]
            batch_mask[b, :length, :length] = mask

        # 4. episode transformer, head dropout, shared classifier
        encoded = self.episode_encoder(batch, batch_mask, train, generator)
        encoded = dropout(encoded, cfg.dropout.head, train, generator)
        probabilities = torch.sigmoid(self.classifier(encoded).squeeze(-1))
        # scores stay strictly inside (0, 1) even where the sigmoid saturates
        eps = torch.finfo(probabilities.dtype).eps
        probabilities = probabilities.clamp(eps, 1.0 - eps)

        results = []
        for b, p in enumerate(prepared):
            shot_positions = torch.tensor(p.partition.positions_of(SHOT), dtype=torch.long)
            dialog_positions = torch.tensor(p.partition.positions_of(DIALOG), dtype=torch.long)
            results.append(
                EpisodeScores(
                    shot_scores=probabilities[b, shot_positions],
                    dialog_scores=probabilities[b, dialog_positions],
                )
            )
        return results

    def predict(self, episode: EpisodeFeatures) -> EpisodeScores:
        with torch.no_grad():
            return self.forward([episode], train=False)[0]

    def zero_residual_branches(self) -> None:
        for encoder in (self.episode_encoder, getattr(self.shot_encoder, "encoder", None)):
            if encoder is None:
                continue
            for layer in encoder.layers:
                layer.zero_residual_branches()

    def num_parameters(self) -> int:
        return sum(p.numel() for p in self.parameters() if p.requires_grad)


def episode_forward(
    episode: EpisodeFeatures,
    model: TaleSumm,
    train: bool = False,
    generator: Optional[torch.Generator] = None,
) -> EpisodeScores:
    return model([episode], train, generator)[0]


def predict(episode: EpisodeFeatures, model: TaleSumm) -> EpisodeScores:
    """
    Inference mode: no dropout, evenly spaced frames
    """
    return model.predict(episode)
