"""
Episode / recap manifests: JSON descriptions of shots and utterances whose
features live in TSTN tensor files next to the manifest
"""
import json
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import List, Optional, Union

import numpy as np
import torch
from pydantic import BaseModel, Field, ValidationError, model_validator

from ..core.errors import ManifestError, TensorFormatError
from ..model.features import EpisodeFeatures, ShotFeatures, UtteranceFeatures
from ..processor.shot_matcher import FrameBank
from .tensor_file import read_tensor

logger = logging.getLogger(__name__)

MANIFEST_VERSION = 1


class ShotEntry(BaseModel):
    id: str
    start_s: float = Field(..., ge=0)
    end_s: float
    features: List[str]  # one tensor file per backbone, relative to the manifest
    validity: Optional[List[bool]] = None  # per frame; False = unusable (e.g. too dark)


class UtteranceEntry(BaseModel):
    id: str
    start_s: float = Field(..., ge=0)
    end_s: float
    tokens: str


class EpisodeManifest(BaseModel):
    schema_version: int = MANIFEST_VERSION
    episode_id: str
    season: Optional[str] = None
    duration_s: float = Field(..., gt=0)
    backbone_dims: List[int]
    utterance_dim: Optional[int] = None
    match_backbone: int = 0
    shots: List[ShotEntry]
    utterances: List[UtteranceEntry] = Field(default_factory=list)
    labels: Optional[str] = None

    @model_validator(mode="after")
    def check_layout(self) -> "EpisodeManifest":
        if self.schema_version != MANIFEST_VERSION:
            raise ValueError(f"unsupported manifest version {self.schema_version}")
        if not self.shots:
            raise ValueError(f"episode {self.episode_id} lists no shots")
        if not 0 <= self.match_backbone < len(self.backbone_dims):
            raise ValueError(f"match_backbone {self.match_backbone} is not a declared backbone")
        for kind, entries in (("shot", self.shots), ("utterance", self.utterances)):
            ids = [e.id for e in entries]
            if len(set(ids)) != len(ids):
                raise ValueError(f"duplicate {kind} ids in episode {self.episode_id}")
            for entry in entries:
                if entry.end_s <= entry.start_s:
                    raise ValueError(f"{kind} '{entry.id}' has an empty span")
                if entry.end_s > self.duration_s + 1e-9:
                    raise ValueError(
                        f"{kind} '{entry.id}' ends at {entry.end_s}s after the episode ({self.duration_s}s)"
                    )
            for prev, nxt in zip(entries, entries[1:]):
                if nxt.start_s < prev.end_s:
                    raise ValueError(
                        f"{kind}s '{prev.id}' and '{nxt.id}' overlap or are out of order"
                    )
        for shot in self.shots:
            if len(shot.features) != len(self.backbone_dims):
                raise ValueError(
                    f"shot '{shot.id}' lists {len(shot.features)} feature files "
                    f"for {len(self.backbone_dims)} backbones"
                )
        return self

    def shot_ids(self) -> List[str]:
        return [s.id for s in self.shots]

    def utterance_ids(self) -> List[str]:
        return [u.id for u in self.utterances]


@dataclass
class LoadedEpisode:
    manifest: EpisodeManifest
    features: EpisodeFeatures
    root: Path

    def frame_bank(self, backbone: Optional[int] = None) -> FrameBank:
        """
        Frame embeddings of one backbone (the manifest's match backbone by default)
        """
        k = self.manifest.match_backbone if backbone is None else backbone
        frames = [shot.frames[k].double().numpy() for shot in self.features.shots]
        validity = [
            shot.validity.bool().numpy()
            if shot.validity is not None
            else np.ones(shot.num_frames, dtype=bool)
            for shot in self.features.shots
        ]
        return FrameBank(frames, validity)

    def durations(self) -> np.ndarray:
        return np.array([s.end_s - s.start_s for s in self.manifest.shots], dtype=np.float64)

    def labels_path(self) -> Optional[Path]:
        return self.root / self.manifest.labels if self.manifest.labels else None


def _load(root: Path, relative: str, owner: str) -> torch.Tensor:
    path = root / relative
    if not path.is_file():
        raise ManifestError(f"{owner}: missing feature file {path}")
    tensor = read_tensor(path)
    if tensor.dim() != 2:
        raise TensorFormatError(
            f"{owner}: expected a 2-D matrix, got shape {tuple(tensor.shape)}", path=str(path)
        )
    return tensor


def read_manifest(path: Union[str, Path]) -> EpisodeManifest:
    path = Path(path)
    if not path.is_file():
        raise ManifestError(f"manifest not found: {path}")
    try:
        return EpisodeManifest.model_validate(json.loads(path.read_text()))
    except json.JSONDecodeError as exc:
        raise ManifestError(f"{path}: not valid JSON ({exc})") from exc
    except ValidationError as exc:
        raise ManifestError(f"{path}: {exc}") from exc


def load_manifest(path: Union[str, Path]) -> LoadedEpisode:
    """
    Read a manifest and every tensor it references, checking declared dims
    """
    path = Path(path)
    manifest = read_manifest(path)
    root = path.parent

    shots = []
    for entry in manifest.shots:
        frames = []
        for k, (relative, dim) in enumerate(zip(entry.features, manifest.backbone_dims)):
            tensor = _load(root, relative, f"shot '{entry.id}'")
            if tensor.shape[1] != dim:
                raise ManifestError(
                    f"shot '{entry.id}', backbone {k}: feature dim {tensor.shape[1]}, declared {dim}"
                )
            frames.append(tensor)
        counts = {int(f.shape[0]) for f in frames}
        if len(counts) != 1 or 0 in counts:
            raise ManifestError(f"shot '{entry.id}': backbone frame counts {sorted(counts)} disagree")
        validity = None
        if entry.validity is not None:
            if len(entry.validity) != frames[0].shape[0]:
                raise ManifestError(
                    f"shot '{entry.id}': {len(entry.validity)} validity flags for {frames[0].shape[0]} frames"
                )
            validity = torch.tensor(entry.validity, dtype=torch.bool)
        shots.append(ShotFeatures(frames, entry.start_s, entry.end_s, validity, entry.id))

    utterances = []
    for entry in manifest.utterances:
        tokens = _load(root, entry.tokens, f"utterance '{entry.id}'")
        if manifest.utterance_dim is not None and tokens.shape[1] != manifest.utterance_dim:
            raise ManifestError(
                f"utterance '{entry.id}': token dim {tokens.shape[1]}, declared {manifest.utterance_dim}"
            )
        if tokens.shape[0] == 0:
            raise ManifestError(f"utterance '{entry.id}' has no tokens")
        utterances.append(UtteranceFeatures(tokens, entry.start_s, entry.end_s, entry.id))

    features = EpisodeFeatures(manifest.episode_id, shots, utterances, manifest.duration_s)
    logger.info(
        f"Loaded episode {manifest.episode_id}: {features.num_shots} shots, "
        f"{features.num_utterances} utterances"
    )
    return LoadedEpisode(manifest, features, root)
