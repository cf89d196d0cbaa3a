from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Any, Dict, Optional

TIMING_FIELDS = ("forward_ms", "backward_ms", "wall_ms")


@dataclass
class StepRecord:
    epoch: int
    step: int
    loss: float
    lr: float
    e_lin: Optional[float]
    reg_value: Optional[float]
    lam: float
    threshold: Optional[float]
    forward_ms: float = 0.0
    backward_ms: float = 0.0
    wall_ms: float = 0.0

    def as_row(self, timing: bool = True) -> Dict[str, Any]:
        row = asdict(self)
        if not timing:
            for key in TIMING_FIELDS:
                row.pop(key)
        return row


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    clean_acc: float
    robust_acc: float
    elin_probe: Optional[float] = None
    misalignment_probe: Optional[float] = None
    co_flag: bool = False

    def as_row(self) -> Dict[str, Any]:
        return asdict(self)
