"""
Checkpoint directory: index.json (version, config, meta, tensor table) plus one
TSTN file per named tensor under tensors/
"""
import json
import logging
import shutil
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, Optional, Union

import torch
from pydantic import ValidationError

from ..core.errors import CheckpointError, ConfigMismatchError
from ..model.config import TaleSummConfig
from ..model.talesumm import TaleSumm
from .tensor_file import read_tensor, write_tensor

logger = logging.getLogger(__name__)

CHECKPOINT_VERSION = 1
INDEX_FILE = "index.json"
TENSOR_DIR = "tensors"


@dataclass
class LoadedCheckpoint:
    model: TaleSumm
    config: TaleSummConfig
    meta: Dict[str, Any] = field(default_factory=dict)
    optimizer_state: Optional[Dict[str, Any]] = None


def _file_name(name: str) -> str:
    return f"{name}.tstn"


def save_checkpoint(
    path: Union[str, Path],
    model: TaleSumm,
    meta: Optional[Dict[str, Any]] = None,
    optimizer: Optional[torch.optim.Optimizer] = None,
) -> Path:
    """
    Write every state_dict entry once, plus optional AdamW moments
    """
    path = Path(path)
    tensor_dir = path / TENSOR_DIR
    if tensor_dir.exists():
        shutil.rmtree(tensor_dir)
    tensor_dir.mkdir(parents=True)

    table = {}
    state = model.state_dict()
    narrowed = sorted(name for name, tensor in state.items() if tensor.dtype != torch.float32)
    if narrowed:
        logger.warning(
            f"Checkpoint stores float32 only; casting {len(narrowed)} tensors from "
            f"{state[narrowed[0]].dtype} (first: {narrowed[0]})"
        )
    for name, tensor in state.items():
        write_tensor(tensor_dir / _file_name(name), tensor.detach().to(torch.float32))
        table[name] = f"{TENSOR_DIR}/{_file_name(name)}"

    optimizer_index = None
    if optimizer is not None:
        optimizer_index = {"moments": {}, "step": 0}
        for name, param in model.named_parameters():
            state = optimizer.state.get(param)
            if not state:
                continue
            entry = {}
            for key in ("exp_avg", "exp_avg_sq"):
                file_name = _file_name(f"adamw.{name}.{key}")
                write_tensor(tensor_dir / file_name, state[key].to(torch.float32))
                entry[key] = f"{TENSOR_DIR}/{file_name}"
            optimizer_index["moments"][name] = entry
            optimizer_index["step"] = int(state["step"])

    index = {
        "format_version": CHECKPOINT_VERSION,
        "config": model.config.model_dump(mode="json"),
        "meta": meta or {},
        "tensors": table,
        "optimizer": optimizer_index,
    }
    (path / INDEX_FILE).write_text(json.dumps(index, indent=2) + "\n")
    logger.info(f"Checkpoint written to {path} ({len(table)} tensors)")
    return path


def _read_index(path: Path) -> Dict[str, Any]:
    index_path = path / INDEX_FILE
    if not index_path.is_file():
        raise CheckpointError(f"no {INDEX_FILE} in checkpoint {path}")
    try:
        index = json.loads(index_path.read_text())
    except json.JSONDecodeError as exc:
        raise CheckpointError(f"{index_path}: not valid JSON ({exc})") from exc
    version = index.get("format_version")
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    return index


def check_config(stored: TaleSummConfig, requested: Dict[str, Any]) -> None:
    stored_values = stored.model_dump()
    for key, value in requested.items():
        if key not in stored_values:
            raise ConfigMismatchError(f"unknown model setting '{key}'")
        if stored_values[key] != value:
            raise ConfigMismatchError(
                f"checkpoint has {key} = {stored_values[key]!r}, requested {value!r}"
            )


def load_checkpoint(
    path: Union[str, Path], requested: Optional[Dict[str, Any]] = None
) -> LoadedCheckpoint:
    """
    Every tensor is read and validated before the model is built; nothing
    partial is returned on failure
    """
    path = Path(path)
    index = _read_index(path)
    try:
        config = TaleSummConfig.model_validate(index["config"])
    except (KeyError, ValidationError) as exc:
        raise CheckpointError(f"checkpoint {path} has an invalid config: {exc}") from exc
    check_config(config, requested or {})

    tensors = {name: read_tensor(path / relative) for name, relative in index["tensors"].items()}
    optimizer_state = None
    if index.get("optimizer"):
        optimizer_state = {
            "step": int(index["optimizer"]["step"]),
            "moments": {
                name: {key: read_tensor(path / rel) for key, rel in entry.items()}
                for name, entry in index["optimizer"]["moments"].items()
            },
        }

    model = TaleSumm(config)
    expected = set(model.state_dict())
    missing, unexpected = expected - set(tensors), set(tensors) - expected
    if missing or unexpected:
        raise CheckpointError(
            f"checkpoint tensors do not match the model: missing {sorted(missing)[:5]}, "
            f"unexpected {sorted(unexpected)[:5]}"
        )
    for name, tensor in tensors.items():
        target = model.state_dict()[name]
        if tuple(tensor.shape) != tuple(target.shape):
            raise CheckpointError(
                f"tensor '{name}' has shape {tuple(tensor.shape)}, model expects {tuple(target.shape)}"
            )
    model.load_state_dict(tensors, strict=True)
    model.eval()
    logger.info(f"Loaded checkpoint {path}")
    return LoadedCheckpoint(model, config, index.get("meta", {}), optimizer_state)


def restore_optimizer(
    optimizer: torch.optim.Optimizer, model: TaleSumm, state: Dict[str, Any]
) -> None:
    """
    Put saved AdamW moments back onto the matching parameters
    """
    params = dict(model.named_parameters())
    for name, moments in state["moments"].items():
        if name not in params:
            raise CheckpointError(f"optimizer state for unknown parameter '{name}'")
        optimizer.state[params[name]] = {
            "step": torch.tensor(float(state["step"])),
            "exp_avg": moments["exp_avg"].clone(),
            "exp_avg_sq": moments["exp_avg_sq"].clone(),
        }
