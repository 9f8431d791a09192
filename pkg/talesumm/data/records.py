"""
On-disk JSON records (labels, scores, matches, reports, summaries), keyed by
shot / utterance id, plus their exported JSON schemas
"""
import json
import logging
from pathlib import Path
from typing import Any, Dict, List, Literal, Optional, Sequence, Type, TypeVar, Union

import numpy as np
from pydantic import BaseModel, Field, ValidationError

from ..core.errors import InvalidInputError, LabelError
from ..processor.label_builder import LabelSet
from ..processor.shot_matcher import MatchResult
from .manifest import EpisodeManifest
from .splits import SplitSpec

logger = logging.getLogger(__name__)

RECORD_VERSION = 1

Record = TypeVar("Record", bound=BaseModel)


class LabelRecord(BaseModel):
    schema_version: int = RECORD_VERSION
    episode_id: str
    provenance: str = "recap"
    binarize_threshold: float = Field(0.5, ge=0, le=1)
    shots: Dict[str, float]
    dialogs: Dict[str, float] = Field(default_factory=dict)

    @classmethod
    def from_label_set(
        cls,
        episode_id: str,
        labels: LabelSet,
        shot_ids: Sequence[str],
        utterance_ids: Sequence[str],
    ) -> "LabelRecord":
        if len(shot_ids) != len(labels.shot_scores) or len(utterance_ids) != len(labels.dialog_scores):
            raise LabelError(f"episode {episode_id}: label lengths do not match the manifest ids")
        return cls(
            episode_id=episode_id,
            provenance=labels.provenance,
            binarize_threshold=labels.binarize_threshold,
            shots={i: float(v) for i, v in zip(shot_ids, labels.shot_scores)},
            dialogs={i: float(v) for i, v in zip(utterance_ids, labels.dialog_scores)},
        )

    def to_label_set(
        self, shot_ids: Optional[Sequence[str]] = None, utterance_ids: Optional[Sequence[str]] = None
    ) -> LabelSet:
        """
        Scores in manifest order; every id of the episode must be present
        """
        shot_ids = list(self.shots) if shot_ids is None else shot_ids
        utterance_ids = list(self.dialogs) if utterance_ids is None else utterance_ids
        missing = [i for i in shot_ids if i not in self.shots]
        missing += [i for i in utterance_ids if i not in self.dialogs]
        if missing:
            raise LabelError(f"labels of {self.episode_id} miss ids {missing[:5]}")
        return LabelSet(
            shot_scores=np.array([self.shots[i] for i in shot_ids]),
            dialog_scores=np.array([self.dialogs[i] for i in utterance_ids]),
            provenance=self.provenance,
            binarize_threshold=self.binarize_threshold,
        )


class ScoreRecord(BaseModel):
    schema_version: int = RECORD_VERSION
    episode_id: str
    shots: Dict[str, float]
    dialogs: Dict[str, float] = Field(default_factory=dict)

    def ordered(self, ids: Sequence[str], modality: str = "shots") -> np.ndarray:
        table = self.shots if modality == "shots" else self.dialogs
        missing = [i for i in ids if i not in table]
        if missing:
            raise InvalidInputError(f"scores of {self.episode_id} miss {modality} ids {missing[:5]}")
        return np.array([table[i] for i in ids], dtype=np.float64)


class MatchEntry(BaseModel):
    recap_shot: str
    candidates: List[str]
    scores: Dict[str, float]
    best_shot: Optional[str]
    matched: List[str]
    rounds: int = 0
    hit_max_rounds: bool = False


class MatchRecord(BaseModel):
    schema_version: int = RECORD_VERSION
    episode_id: str
    recap_id: str
    config: Dict = Field(default_factory=dict)
    matches: List[MatchEntry]

    @classmethod
    def from_results(
        cls,
        episode_id: str,
        recap_id: str,
        results: Sequence[MatchResult],
        shot_ids: Sequence[str],
        recap_ids: Sequence[str],
        config: Optional[Dict] = None,
    ) -> "MatchRecord":
        entries = [
            MatchEntry(
                recap_shot=recap_ids[r.recap_shot],
                candidates=[shot_ids[c] for c in r.candidates],
                scores={shot_ids[s]: v for s, v in r.scores.items()},
                best_shot=None if r.best_shot is None else shot_ids[r.best_shot],
                matched=[shot_ids[m] for m in r.matched],
                rounds=r.rounds,
                hit_max_rounds=r.hit_max_rounds,
            )
            for r in results
        ]
        return cls(episode_id=episode_id, recap_id=recap_id, config=config or {}, matches=entries)

    def to_results(self, shot_ids: Sequence[str]) -> List[MatchResult]:
        index = {sid: i for i, sid in enumerate(shot_ids)}
        unknown = sorted(
            {s for m in self.matches for s in m.matched + m.candidates} - set(index)
        )
        if unknown:
            raise LabelError(f"matches reference shots absent from {self.episode_id}: {unknown[:5]}")
        return [
            MatchResult(
                recap_shot=r,
                candidates=[index[c] for c in m.candidates],
                scores={index[s]: v for s, v in m.scores.items()},
                best_shot=None if m.best_shot is None else index[m.best_shot],
                matched=[index[s] for s in m.matched],
                rounds=m.rounds,
                hit_max_rounds=m.hit_max_rounds,
            )
            for r, m in enumerate(self.matches)
        ]


class EpisodeMetrics(BaseModel):
    video_ap: Optional[float] = None
    dialog_ap: Optional[float] = None
    video_kendall: Optional[float] = None
    video_spearman: Optional[float] = None


class AgreementMetrics(BaseModel):
    cronbach_alpha: Optional[float] = None
    pairwise_f1: Optional[float] = None
    fleiss_kappa: Optional[float] = None


class AgreementRecord(BaseModel):
    schema_version: int = RECORD_VERSION
    sources: List[str]
    video: AgreementMetrics
    dialog: AgreementMetrics
    created_at: Optional[str] = None


class ReportRecord(BaseModel):
    schema_version: int = RECORD_VERSION
    aggregation: Literal["macro", "pooled"] = "macro"
    threshold: Optional[float] = 0.5
    episode_thresholds: Dict[str, float] = Field(default_factory=dict)
    episodes: Dict[str, EpisodeMetrics]
    summary: EpisodeMetrics
    agreement: Optional[AgreementRecord] = None
    config: Dict = Field(default_factory=dict)
    created_at: Optional[str] = None


class SummaryRecord(BaseModel):
    schema_version: int = RECORD_VERSION
    episode_id: str
    budget_fraction: float
    budget_s: float
    selected: List[str]
    selected_duration_s: float


class HistoryRecord(BaseModel):
    schema_version: int = RECORD_VERSION
    best_epoch: int
    epochs: List[Dict]


RECORD_MODELS: Dict[str, Type[BaseModel]] = {
    "labels": LabelRecord,
    "scores": ScoreRecord,
    "matches": MatchRecord,
    "report": ReportRecord,
    "agreement": AgreementRecord,
    "summary": SummaryRecord,
    "history": HistoryRecord,
}


def write_record(path: Union[str, Path], record: BaseModel) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(record.model_dump(mode="json"), indent=2, sort_keys=False) + "\n")


def read_record(path: Union[str, Path], model: Type[Record]) -> Record:
    path = Path(path)
    if not path.is_file():
        raise InvalidInputError(f"{model.__name__} file not found: {path}")
    try:
        record = model.model_validate(json.loads(path.read_text()))
    except json.JSONDecodeError as exc:
        raise InvalidInputError(f"{path}: not valid JSON ({exc})") from exc
    except ValidationError as exc:
        raise InvalidInputError(f"{path}: {exc}") from exc
    if getattr(record, "schema_version", RECORD_VERSION) != RECORD_VERSION:
        raise InvalidInputError(f"{path}: unsupported schema version {record.schema_version}")
    return record


def _portable(schema: Any) -> Any:
    # "additionalProperties": true is the JSON Schema default and only some pydantic releases emit it
    if isinstance(schema, dict):
        return {k: _portable(v) for k, v in schema.items() if not (k == "additionalProperties" and v is True)}
    if isinstance(schema, list):
        return [_portable(v) for v in schema]
    return schema


def schema_documents() -> Dict[str, Dict[str, Any]]:
    models = dict(RECORD_MODELS, manifest=EpisodeManifest, splits=SplitSpec)
    return {name: _portable(model.model_json_schema()) for name, model in models.items()}


def export_schemas(out_dir: Union[str, Path]) -> List[Path]:
    """
    Write one <name>.schema.json per record model (plus manifests and splits)
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    for name, document in schema_documents().items():
        path = out_dir / f"{name}.schema.json"
        path.write_text(json.dumps(document, indent=2) + "\n")
        written.append(path)
    logger.info(f"Wrote {len(written)} schemas to {out_dir}")
    return written
