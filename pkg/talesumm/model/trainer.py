"""
Episode-batched training loop with AdamW, one-cycle schedule and best-val selection
"""
import copy
import logging
import math
from dataclasses import asdict, dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import torch
from pydantic import BaseModel, Field

from ..core.config import settings
from ..core.errors import MetricError, NonFiniteError, SplitError, TrainingDivergedError
from ..core.optim import OneCycleSchedule, adamw_step, build_optimizer, build_scheduler
from ..core.tensor_ops import backward, make_generator
from ..evaluation.ranking import average_precision
from ..processor.label_builder import LabelSet
from .config import TaleSummConfig
from .features import EpisodeFeatures
from .loss import compute_loss
from .talesumm import TaleSumm

logger = logging.getLogger(__name__)


class TrainConfig(BaseModel):
    epochs: int = Field(65, ge=1)
    batch_size: int = Field(4, ge=1)
    lr: float = Field(1e-4, gt=0)
    weight_decay: float = Field(1e-3, ge=0)
    max_lr: float = Field(1e-3, gt=0)
    pct_start: float = Field(0.3, gt=0, lt=1)
    seed: int = Field(default_factory=lambda: settings.default_seed)


@dataclass
class LabeledEpisode:
    features: EpisodeFeatures
    labels: LabelSet


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    val_video_ap: Optional[float] = None
    val_dialog_ap: Optional[float] = None
    lr: float = 0.0

    def to_dict(self) -> Dict:
        return asdict(self)


@dataclass
class TrainResult:
    model: TaleSumm
    optimizer: torch.optim.AdamW
    history: List[EpochRecord] = field(default_factory=list)
    best_epoch: int = 0
    steps: int = 0


def evaluate_split(
    model: TaleSumm, episodes: Sequence[LabeledEpisode]
) -> Tuple[Optional[float], Optional[float]]:
    """
    Macro AP over episodes for video and dialog; episodes without positives are skipped
    """
    video, dialog = [], []
    for item in episodes:
        scores = model.predict(item.features)
        pairs = (
            (video, scores.shot_scores, item.labels.binary_shots()),
            (dialog, scores.dialog_scores, item.labels.binary_dialogs()),
        )
        for bucket, predicted, truth in pairs:
            if predicted.numel() == 0:
                continue
            try:
                bucket.append(average_precision(predicted.double().numpy(), truth))
            except MetricError:
                continue
    return (
        float(np.mean(video)) if video else None,
        float(np.mean(dialog)) if dialog else None,
    )


class Trainer:
    """
    Owns the model, optimizer and schedule for one training run
    """

    def __init__(
        self,
        model_config: TaleSummConfig,
        train_config: Optional[TrainConfig] = None,
        model: Optional[TaleSumm] = None,
    ):
        self.model_config = model_config
        self.config = train_config or TrainConfig()
        if model is None:
            torch.manual_seed(self.config.seed)
            model = TaleSumm(model_config)
        self.model = model
        self.generator = make_generator(self.config.seed)
        self.shuffle_generator = make_generator(self.config.seed + 1)
        self.optimizer = build_optimizer(
            self.model.parameters(), lr=self.config.lr, weight_decay=self.config.weight_decay
        )
        self.steps = 0

    def _batches(self, count: int) -> List[List[int]]:
        order = torch.randperm(count, generator=self.shuffle_generator).tolist()
        size = self.config.batch_size
        return [order[i : i + size] for i in range(0, count, size)]

    def _step(self, batch: Sequence[LabeledEpisode], epoch: int) -> float:
        self.optimizer.zero_grad(set_to_none=True)
        scores = self.model([item.features for item in batch], train=True, generator=self.generator)
        diagnostics = {
            "epoch": epoch,
            "step": self.steps,
            "episodes": [item.features.episode_id for item in batch],
        }
        diverged = [
            item.features.episode_id
            for s, item in zip(scores, batch)
            if not (torch.isfinite(s.shot_scores).all() and torch.isfinite(s.dialog_scores).all())
        ]
        if diverged:
            diagnostics["non_finite_scores"] = diverged
            logger.error(f"Non-finite scores at step {self.steps} for {diverged}")
            raise TrainingDivergedError("model scores became non-finite", diagnostics)

        losses = [compute_loss(s, item.labels) for s, item in zip(scores, batch)]
        loss = torch.stack(losses).mean()
        if not torch.isfinite(loss):
            diagnostics["loss"] = float(loss.detach())
            logger.error(f"Non-finite loss at step {self.steps}")
            raise TrainingDivergedError("training loss became non-finite", diagnostics)

        backward(loss)
        try:
            adamw_step(self.optimizer, self.model.named_parameters())
        except NonFiniteError as exc:
            diagnostics["parameter"] = exc.parameter
            logger.error(f"Non-finite gradient at step {self.steps}: {exc}")
            raise TrainingDivergedError("gradients became non-finite", diagnostics) from exc
        self.steps += 1
        return float(loss.detach())

    def fit(
        self,
        train_set: Sequence[LabeledEpisode],
        val_set: Sequence[LabeledEpisode] = (),
    ) -> TrainResult:
        if not train_set:
            raise SplitError("training needs at least one episode")
        cfg = self.config
        steps_per_epoch = math.ceil(len(train_set) / cfg.batch_size)
        schedule = OneCycleSchedule(
            max_lr=cfg.max_lr, total_steps=cfg.epochs * steps_per_epoch, pct_start=cfg.pct_start
        )
        scheduler = build_scheduler(self.optimizer, schedule)
        if not val_set:
            logger.warning("No validation episodes; selecting the epoch with the lowest train loss")

        logger.info(
            f"Training on {len(train_set)} episodes ({len(val_set)} val) for {cfg.epochs} epochs, "
            f"{steps_per_epoch} steps each, {self.model.num_parameters()} parameters"
        )

        history: List[EpochRecord] = []
        best_score, best_epoch = -math.inf, 0
        best_state = copy.deepcopy(self.model.state_dict())

        for epoch in range(1, cfg.epochs + 1):
            # 1. one pass over shuffled batches
            self.model.train()
            batch_losses, batch_sizes = [], []
            lr = self.optimizer.param_groups[0]["lr"]
            for indices in self._batches(len(train_set)):
                lr = self.optimizer.param_groups[0]["lr"]
                batch_losses.append(self._step([train_set[i] for i in indices], epoch))
                batch_sizes.append(len(indices))
                scheduler.step()
            train_loss = float(np.average(batch_losses, weights=batch_sizes))

            # 2. validation
            self.model.eval()
            video_ap, dialog_ap = evaluate_split(self.model, val_set) if val_set else (None, None)
            record = EpochRecord(epoch, train_loss, video_ap, dialog_ap, lr)
            history.append(record)

            # 3. model selection
            available = [ap for ap in (video_ap, dialog_ap) if ap is not None]
            score = float(np.mean(available)) if available else -train_loss
            if score > best_score:
                best_score, best_epoch = score, epoch
                best_state = copy.deepcopy(self.model.state_dict())

            logger.info(
                f"epoch {epoch}/{cfg.epochs} loss {train_loss:.4f} "
                f"val AP video {_fmt(video_ap)} dialog {_fmt(dialog_ap)} lr {lr:.2e}"
            )

        self.model.load_state_dict(best_state)
        self.model.eval()
        logger.info(f"Best epoch {best_epoch} (selection score {best_score:.4f})")
        return TrainResult(self.model, self.optimizer, history, best_epoch, self.steps)


def _fmt(value: Optional[float]) -> str:
    return "n/a" if value is None else f"{value:.4f}"


def train(
    train_set: Sequence[LabeledEpisode],
    val_set: Sequence[LabeledEpisode],
    model_config: TaleSummConfig,
    train_config: Optional[TrainConfig] = None,
) -> TrainResult:
    return Trainer(model_config, train_config).fit(train_set, val_set)
