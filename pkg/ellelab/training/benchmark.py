from __future__ import annotations

import dataclasses
import logging
from dataclasses import dataclass
from typing import Dict, List, Sequence

import numpy as np

from ellelab.data import Dataset
from ellelab.regularizers import RegularizerSpec

from .config import RunConfig
from .trainer import Trainer

logger = logging.getLogger(__name__)

TIMING_METHODS: Dict[str, str] = {
    "fgsm": "none",
    "elle": "elle",
    "elle_a": "elle_a",
    "gradalign": "gradalign",
    "llr_sq": "llr_sq",
    "cure": "cure",
}


@dataclass
class TimingRow:
    method: str
    forward_ms: float
    backward_ms: float
    total_ms: float
    steps: int


def benchmark_methods(
    config: RunConfig,
    train_set: Dataset,
    test_set: Dataset,
    methods: Sequence[str] = tuple(TIMING_METHODS),
    n_steps: int = 20,
    warmup: int = 2,
    lam: float = 1.0,
) -> List[TimingRow]:
    """Median per-step times of each method on one fixed batch and parameter point.

    Every method runs FGSM as its attack; the learning rate is 0 so all
    methods are timed at the same parameters.
    """
    x = np.asarray(train_set.inputs[: config.batch_size])
    y = train_set.labels[: config.batch_size]
    rows = []
    for method in methods:
        reg = RegularizerSpec(kind=TIMING_METHODS[method], lam=lam, gamma=config.regularizer.gamma)
        cfg = dataclasses.replace(config, attack=dataclasses.replace(config.attack, kind="fgsm"), regularizer=reg)
        trainer = Trainer(cfg, train_set, test_set)
        records = [trainer.step(0, i, x, y, lr=0.0) for i in range(warmup + n_steps)][warmup:]
        row = TimingRow(
            method=method,
            forward_ms=float(np.median([r.forward_ms for r in records])),
            backward_ms=float(np.median([r.backward_ms for r in records])),
            total_ms=float(np.median([r.wall_ms for r in records])),
            steps=n_steps,
        )
        logger.info("timing method=%s forward=%.3fms backward=%.3fms total=%.3fms", method, row.forward_ms, row.backward_ms, row.total_ms)
        rows.append(row)
    return rows
