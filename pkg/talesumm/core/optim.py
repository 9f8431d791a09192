"""
AdamW wiring and the one-cycle learning-rate schedule
"""
import logging
import math
from typing import Iterable, List, Optional, Tuple

import torch
from pydantic import BaseModel, Field, model_validator
from torch.optim.lr_scheduler import LambdaLR

from .tensor_ops import check_finite_grads

logger = logging.getLogger(__name__)


class OneCycleSchedule(BaseModel):
    max_lr: float = Field(1e-3, gt=0)
    total_steps: int = Field(..., gt=0)
    pct_start: float = Field(0.3, gt=0, lt=1)
    initial_div: float = Field(25.0, gt=0)
    final_div: float = Field(1e4, gt=0)

    @property
    def peak_step(self) -> int:
        return int(math.floor(self.pct_start * self.total_steps + 0.5))


def _cosine_anneal(start: float, end: float, pct: float) -> float:
    return end + (start - end) / 2.0 * (math.cos(math.pi * pct) + 1.0)


def onecycle_lr(schedule: OneCycleSchedule, step: int) -> float:
    """
    Cosine warm-up from max_lr/initial_div to max_lr at the peak step, then cosine
    decay to max_lr/final_div at the last step
    """
    if not 0 <= step < schedule.total_steps:
        raise ValueError(f"step {step} outside [0, {schedule.total_steps})")
    peak = min(schedule.peak_step, schedule.total_steps - 1)
    start_lr = schedule.max_lr / schedule.initial_div
    end_lr = schedule.max_lr / schedule.final_div

    if step <= peak:
        if peak == 0:
            return schedule.max_lr
        return _cosine_anneal(start_lr, schedule.max_lr, step / peak)

    decay_steps = schedule.total_steps - 1 - peak
    return _cosine_anneal(schedule.max_lr, end_lr, (step - peak) / decay_steps)


def build_optimizer(
    params: Iterable[torch.nn.Parameter],
    lr: float = 1e-4,
    weight_decay: float = 1e-3,
    betas: Tuple[float, float] = (0.9, 0.999),
    eps: float = 1e-8,
) -> torch.optim.AdamW:
    trainable = [p for p in params if p.requires_grad]
    return torch.optim.AdamW(trainable, lr=lr, betas=betas, eps=eps, weight_decay=weight_decay)


def build_scheduler(optimizer: torch.optim.Optimizer, schedule: OneCycleSchedule) -> LambdaLR:
    """
    LambdaLR whose effective learning rate equals onecycle_lr(schedule, step)
    """
    base_lrs: List[float] = [group["lr"] for group in optimizer.param_groups]

    def factor_for(base_lr: float):
        def factor(step: int) -> float:
            clamped = min(step, schedule.total_steps - 1)
            return onecycle_lr(schedule, clamped) / base_lr

        return factor

    logger.debug(
        f"one-cycle schedule: {schedule.total_steps} steps, peak {schedule.max_lr} at step {schedule.peak_step}"
    )
    return LambdaLR(optimizer, lr_lambda=[factor_for(lr) for lr in base_lrs])


def adamw_step(
    optimizer: torch.optim.Optimizer,
    named_params: Iterable[Tuple[str, torch.nn.Parameter]],
    lr: Optional[float] = None,
) -> None:
    """
    One decoupled-weight-decay Adam update; refuses to step on non-finite gradients
    """
    check_finite_grads(named_params)
    if lr is not None:
        for group in optimizer.param_groups:
            group["lr"] = lr
    optimizer.step()
