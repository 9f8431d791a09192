"""
Train / val / test split specifications and intra-season k-fold generation
"""
import logging
from dataclasses import dataclass
from typing import Dict, List, Literal, Mapping, Sequence

import numpy as np
from pydantic import BaseModel, Field

from ..core.errors import SplitError

logger = logging.getLogger(__name__)

SPLIT_VERSION = 1


class SplitParts(BaseModel):
    train: List[str]
    val: List[str] = Field(default_factory=list)
    test: List[str] = Field(default_factory=list)


class SplitSpec(BaseModel):
    schema_version: int = SPLIT_VERSION
    style: Literal["intra", "cross_season", "cross_series", "custom"] = "custom"
    splits: Dict[str, SplitParts]


@dataclass
class ResolvedSplit:
    name: str
    train: List[str]
    val: List[str]
    test: List[str]

    @property
    def empty_val(self) -> bool:
        return not self.val


def make_splits(spec: SplitSpec, catalog: Sequence[str]) -> Dict[str, ResolvedSplit]:
    """
    Check every split against the episode catalog; parts must be disjoint
    """
    known = set(catalog)
    resolved = {}
    for name, parts in spec.splits.items():
        seen: Dict[str, str] = {}
        for part in ("train", "val", "test"):
            for episode_id in getattr(parts, part):
                if episode_id not in known:
                    raise SplitError(f"split '{name}': unknown episode '{episode_id}' in {part}")
                if episode_id in seen:
                    raise SplitError(
                        f"split '{name}': episode '{episode_id}' is in both {seen[episode_id]} and {part}"
                    )
                seen[episode_id] = part
        split = ResolvedSplit(name, list(parts.train), list(parts.val), list(parts.test))
        if split.empty_val:
            logger.warning(f"split '{name}' has no validation episodes")
        resolved[name] = split
    return resolved


def kfold_splits(
    seasons: Mapping[str, Sequence[str]], folds: int = 5, n_val: int = 1, n_test: int = 1
) -> SplitSpec:
    """
    Intra-season cross-validation-test: every season is cut into `folds`
    contiguous chunks; fold f tests on chunks f .. f + n_test - 1, validates
    on the n_val chunks after those (wrapping around) and trains on the rest,
    in every season at once
    """
    if n_test < 1 or n_val < 0:
        raise SplitError(f"k-fold splitting needs n_test >= 1 and n_val >= 0, got {n_test} and {n_val}")
    if n_val + n_test >= folds:
        raise SplitError(f"{n_val} val + {n_test} test chunks leave nothing to train on in {folds} folds")
    chunks_by_season = {}
    for season, episodes in seasons.items():
        if len(episodes) < folds:
            raise SplitError(f"season '{season}' has {len(episodes)} episodes for {folds} folds")
        chunks_by_season[season] = [list(c) for c in np.array_split(np.array(episodes, dtype=object), folds)]

    splits = {}
    for f in range(folds):
        test_chunks = [(f + i) % folds for i in range(n_test)]
        val_chunks = [(f + n_test + i) % folds for i in range(n_val)]
        parts = SplitParts(train=[], val=[], test=[])
        for chunks in chunks_by_season.values():
            for c, chunk in enumerate(chunks):
                if c in test_chunks:
                    parts.test += chunk
                elif c in val_chunks:
                    parts.val += chunk
                else:
                    parts.train += chunk
        splits[f"fold{f}"] = parts
    return SplitSpec(style="intra", splits=splits)
