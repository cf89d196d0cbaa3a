from __future__ import annotations

import math

from ellelab.errors import ContractError

from .config import ScheduleConfig


def progress(epoch: int, step: int, steps_per_epoch: int, epochs: int) -> float:
    return (epoch + step / steps_per_epoch) / epochs


def lr_at(schedule: ScheduleConfig, epoch: int, step: int, steps_per_epoch: int, epochs: int) -> float:
    """Learning rate for one optimizer step.

    short: triangle 0 → lr_max → 0 peaking halfway, interpolated per step.
    long: lr0 multiplied by `decay` at each milestone epoch passed.
    long_cos: lr0 · ½(1 + cos(π · progress)).
    """
    if not 0 <= epoch < epochs:
        raise ContractError(f"epoch {epoch} outside [0, {epochs})")
    if steps_per_epoch < 1 or not 0 <= step < steps_per_epoch:
        raise ContractError(f"step {step} outside [0, {steps_per_epoch})")
    p = progress(epoch, step, steps_per_epoch, epochs)
    if schedule.kind == "short":
        return schedule.lr_max * (2.0 * p if p <= 0.5 else 2.0 * (1.0 - p))
    if schedule.kind == "long":
        passed = sum(1 for m in schedule.milestones if epoch >= m)
        return schedule.lr0 * schedule.decay**passed
    if schedule.kind == "long_cos":
        return schedule.lr0 * 0.5 * (1.0 + math.cos(math.pi * p))
    return schedule.lr0
