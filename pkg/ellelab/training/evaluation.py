from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from ellelab.attacks import AttackSpec, run_attack
from ellelab.data import Dataset
from ellelab.errors import ContractError
from ellelab.models import ModelParams, model_forward

from .config import CODetectorConfig
from .records import EpochRecord

logger = logging.getLogger(__name__)

# Extra entropy word separating evaluation draws from training-step draws.
EVAL_STREAM = 7_919


def evaluate(
    params: ModelParams,
    dataset: Dataset,
    attack: Optional[AttackSpec] = None,
    seed: int = 0,
    batch_size: int = 256,
) -> float:
    """Fraction of argmax-correct predictions; ties go to the lowest class index."""
    if len(dataset) == 0:
        raise ContractError(f"cannot evaluate on the empty dataset {dataset.name}")
    correct = 0
    for start in range(0, len(dataset), batch_size):
        x = np.asarray(dataset.inputs[start : start + batch_size])
        y = dataset.labels[start : start + batch_size]
        if attack is not None and attack.kind != "none":
            rng = np.random.default_rng([seed, EVAL_STREAM, start])
            x = run_attack(params, x, y, attack, rng=rng)
        logits = model_forward(params, x)
        correct += int(np.sum(np.argmax(logits, axis=1) == y))
    return correct / len(dataset)


@dataclass(frozen=True)
class CODetection:
    flagged: bool
    epoch: Optional[int] = None


def co_detect(history: Sequence[EpochRecord], config: CODetectorConfig) -> CODetection:
    """First epoch whose probe E_lin spikes above spike_factor × the median of
    the previous `window` epochs while robust accuracy has fallen to at most
    (1 − drop) × its best so far.
    """
    probed = [r for r in history if r.elin_probe is not None]
    w = config.window
    for i in range(w, len(probed)):
        baseline = float(np.median([r.elin_probe for r in probed[i - w : i]]))
        best = max(r.robust_acc for r in probed[:i])
        spike = probed[i].elin_probe > config.spike_factor * baseline
        drop = probed[i].robust_acc <= (1.0 - config.drop) * best
        if spike and drop:
            logger.info("Catastrophic overfitting flagged at epoch %d", probed[i].epoch)
            return CODetection(True, probed[i].epoch)
    return CODetection(False)
