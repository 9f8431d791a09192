"""
Synthetic episodes with planted story segments and a matching recap.

Every shot gets a random latent per backbone and its frames scatter around it
with noise sigma. A planted segment is a run of consecutive shots that share
one latent (a shot thread); the recap holds a trimmed, re-noised copy of one
member of each segment, so recap matching can recover the whole thread.
"""
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional, Tuple, Union

import numpy as np
import torch
from pydantic import BaseModel, Field, model_validator

from ..model.features import EpisodeFeatures, ShotFeatures, UtteranceFeatures
from ..processor.label_builder import LabelSet, inherit_dialog_labels
from .manifest import EpisodeManifest, ShotEntry, UtteranceEntry
from .records import LabelRecord, write_record
from .tensor_file import write_tensor

logger = logging.getLogger(__name__)

PLANTED_PROVENANCE = "planted"


class SynthConfig(BaseModel):
    seed: int = 0
    num_shots: int = Field(50, ge=1)
    num_utterances: int = Field(40, ge=0)
    backbone_dims: List[int] = Field(default_factory=lambda: [16, 12, 8])
    utterance_dim: int = Field(24, gt=0)
    frames_per_shot: Tuple[int, int] = (4, 12)
    tokens_per_utterance: Tuple[int, int] = (3, 10)
    shot_length_s: Tuple[float, float] = (1.0, 6.0)
    planted_segments: int = Field(3, ge=1)
    planted_width: int = Field(3, ge=1)
    recap_trim: float = Field(0.5, gt=0, le=1)
    noise: float = Field(0.01, ge=0)
    signal: float = Field(1.0, ge=0)
    decoy_recap_shots: int = Field(0, ge=0)
    invalid_frame_rate: float = Field(0.0, ge=0, lt=1)

    @model_validator(mode="after")
    def check_ranges(self) -> "SynthConfig":
        if self.planted_segments * self.planted_width > self.num_shots:
            raise ValueError(
                f"{self.planted_segments} planted segments of width {self.planted_width} "
                f"do not fit in {self.num_shots} shots"
            )
        for name, (low, high) in (
            ("frames_per_shot", self.frames_per_shot),
            ("tokens_per_utterance", self.tokens_per_utterance),
        ):
            if not 1 <= low <= high:
                raise ValueError(f"{name} must satisfy 1 <= low <= high, got ({low}, {high})")
        low, high = self.shot_length_s
        if not 0 < low <= high:
            raise ValueError(f"shot_length_s must satisfy 0 < low <= high, got ({low}, {high})")
        if any(d <= 0 for d in self.backbone_dims):
            raise ValueError("backbone dims must be positive")
        return self


@dataclass
class SynthBundle:
    config: SynthConfig
    episode: EpisodeFeatures
    recap: EpisodeFeatures
    labels: LabelSet
    planted_shots: List[int] = field(default_factory=list)
    recap_sources: List[int] = field(default_factory=list)  # episode shot copied per recap shot, -1 = decoy


def _unit_rows(rng: np.random.Generator, count: int, dim: int) -> np.ndarray:
    rows = rng.standard_normal((count, dim))
    return rows / np.linalg.norm(rows, axis=1, keepdims=True)


def _place_segments(rng: np.random.Generator, cfg: SynthConfig) -> List[List[int]]:
    """
    One segment per equal region of the shot range, at a random offset inside it
    """
    bounds = np.linspace(0, cfg.num_shots, cfg.planted_segments + 1).astype(int)
    segments = []
    for start, stop in zip(bounds[:-1], bounds[1:]):
        offset = int(rng.integers(start, stop - cfg.planted_width + 1))
        segments.append(list(range(offset, offset + cfg.planted_width)))
    return segments


def synth_generate(cfg: SynthConfig) -> SynthBundle:
    rng = np.random.default_rng(cfg.seed)
    n = cfg.num_shots

    # 1. latents: random per shot, shared within a planted thread, shifted by a signal direction
    segments = _place_segments(rng, cfg)
    planted = sorted(s for seg in segments for s in seg)
    signals = [_unit_rows(rng, 1, d)[0] for d in cfg.backbone_dims]
    latents = [_unit_rows(rng, n, d) for d in cfg.backbone_dims]
    for k in range(len(cfg.backbone_dims)):
        for seg in segments:
            shared = latents[k][seg[0]] + cfg.signal * signals[k]
            latents[k][seg] = shared / np.linalg.norm(shared)

    # 2. frames and shot spans
    lengths = rng.uniform(cfg.shot_length_s[0], cfg.shot_length_s[1], size=n)
    edges = np.concatenate([[0.0], np.cumsum(lengths)])
    duration = float(edges[-1])
    shots: List[ShotFeatures] = []
    for i in range(n):
        count = int(rng.integers(cfg.frames_per_shot[0], cfg.frames_per_shot[1] + 1))
        frames = [
            (latents[k][i] + cfg.noise * rng.standard_normal((count, d))).astype(np.float32)
            for k, d in enumerate(cfg.backbone_dims)
        ]
        validity = None
        if cfg.invalid_frame_rate > 0:
            flags = rng.uniform(size=count) >= cfg.invalid_frame_rate
            flags[int(rng.integers(count))] = True
            validity = torch.from_numpy(flags)
        shots.append(
            ShotFeatures(
                [torch.from_numpy(f) for f in frames],
                float(edges[i]),
                float(edges[i + 1]),
                validity,
                f"shot{i:04d}",
            )
        )

    # 3. utterances: one per equal time slot, planted ones carry the dialog signal
    utterance_signal = _unit_rows(rng, 1, cfg.utterance_dim)[0]
    shot_spans = [(s.start, s.end) for s in shots]
    slot = duration / cfg.num_utterances if cfg.num_utterances else 0.0
    utterance_spans = [
        (l * slot + 0.1 * slot, (l + 1) * slot - 0.1 * slot) for l in range(cfg.num_utterances)
    ]
    shot_truth = np.zeros(n)
    shot_truth[planted] = 1.0
    dialog_truth = (
        inherit_dialog_labels(shot_truth, shot_spans, utterance_spans)
        if utterance_spans
        else np.zeros(0)
    )
    utterances: List[UtteranceFeatures] = []
    for l, (start, end) in enumerate(utterance_spans):
        count = int(rng.integers(cfg.tokens_per_utterance[0], cfg.tokens_per_utterance[1] + 1))
        tokens = rng.standard_normal((count, cfg.utterance_dim))
        tokens += cfg.signal * dialog_truth[l] * utterance_signal
        utterances.append(
            UtteranceFeatures(torch.from_numpy(tokens.astype(np.float32)), start, end, f"utt{l:04d}")
        )

    # 4. recap: trimmed noisy copy of one member per segment, plus decoys
    recap_shots: List[ShotFeatures] = []
    sources: List[int] = []
    cursor = 0.0
    for seg in segments:
        source = seg[len(seg) // 2]
        frames = shots[source].frames
        total = frames[0].shape[0]
        keep = max(1, int(round(cfg.recap_trim * total)))
        begin = int(rng.integers(0, total - keep + 1))
        copied = [
            (f[begin : begin + keep].numpy().astype(np.float64)
             + cfg.noise * rng.standard_normal((keep, f.shape[1]))).astype(np.float32)
            for f in frames
        ]
        span = keep / total * (shots[source].end - shots[source].start)
        recap_shots.append(
            ShotFeatures([torch.from_numpy(c) for c in copied], cursor, cursor + span, None, f"recap{len(sources):03d}")
        )
        sources.append(source)
        cursor += span
    for _ in range(cfg.decoy_recap_shots):
        count = int(rng.integers(cfg.frames_per_shot[0], cfg.frames_per_shot[1] + 1))
        frames = [
            (_unit_rows(rng, 1, d)[0] + cfg.noise * rng.standard_normal((count, d))).astype(np.float32)
            for d in cfg.backbone_dims
        ]
        recap_shots.append(
            ShotFeatures([torch.from_numpy(f) for f in frames], cursor, cursor + 1.0, None, f"recap{len(sources):03d}")
        )
        sources.append(-1)
        cursor += 1.0

    episode_id = f"synth-{cfg.seed}"
    episode = EpisodeFeatures(episode_id, shots, utterances, duration)
    recap = EpisodeFeatures(f"{episode_id}-recap", recap_shots, [], cursor)
    labels = LabelSet(shot_truth, dialog_truth, provenance=PLANTED_PROVENANCE)
    logger.info(
        f"Synthesized {episode_id}: {n} shots, {cfg.num_utterances} utterances, "
        f"{len(planted)} planted shots, {len(recap_shots)} recap shots"
    )
    return SynthBundle(cfg, episode, recap, labels, planted, sources)


def _write_episode(
    episode: EpisodeFeatures, out_dir: Path, prefix: str, labels_file: Optional[str] = None
) -> EpisodeManifest:
    dims = episode.backbone_dims()
    shot_entries = []
    for shot in episode.shots:
        files = []
        for k, frames in enumerate(shot.frames):
            relative = f"{prefix}/{shot.shot_id}.b{k}.tstn"
            write_tensor(out_dir / relative, frames)
            files.append(relative)
        validity = shot.validity.tolist() if shot.validity is not None else None
        shot_entries.append(ShotEntry(id=shot.shot_id, start_s=shot.start, end_s=shot.end, features=files, validity=validity))
    utterance_entries = []
    for utterance in episode.utterances:
        relative = f"{prefix}/{utterance.utterance_id}.tstn"
        write_tensor(out_dir / relative, utterance.tokens)
        utterance_entries.append(
            UtteranceEntry(id=utterance.utterance_id, start_s=utterance.start, end_s=utterance.end, tokens=relative)
        )
    return EpisodeManifest(
        episode_id=episode.episode_id,
        duration_s=episode.duration,
        backbone_dims=dims,
        utterance_dim=episode.utterance_dim(),
        shots=shot_entries,
        utterances=utterance_entries,
        labels=labels_file,
    )


def write_synth(bundle: SynthBundle, out_dir: Union[str, Path]) -> Path:
    """
    episode.json + recap.json manifests, planted labels.json and all tensor files
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    episode_manifest = _write_episode(bundle.episode, out_dir, "episode", labels_file="planted_labels.json")
    recap_manifest = _write_episode(bundle.recap, out_dir, "recap")
    (out_dir / "episode.json").write_text(episode_manifest.model_dump_json(indent=2) + "\n")
    (out_dir / "recap.json").write_text(recap_manifest.model_dump_json(indent=2) + "\n")
    write_record(
        out_dir / "planted_labels.json",
        LabelRecord.from_label_set(
            bundle.episode.episode_id,
            bundle.labels,
            episode_manifest.shot_ids(),
            episode_manifest.utterance_ids(),
        ),
    )
    logger.info(f"Wrote synthetic episode and recap to {out_dir}")
    return out_dir
