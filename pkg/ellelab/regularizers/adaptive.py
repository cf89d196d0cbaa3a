from __future__ import annotations

import logging
import math
from dataclasses import dataclass

from ellelab.errors import ContractError

logger = logging.getLogger(__name__)


@dataclass
class AdaptiveLambdaState:
    """Streaming mean/M2 of every E_lin seen so far plus the current weight.

    The history is never reset; population variance is M2 / n.
    """

    lambda_max: float
    gamma: float = 0.99
    count: int = 0
    mean: float = 0.0
    m2: float = 0.0
    lam: float = 0.0
    last_threshold: float = 0.0

    def __post_init__(self) -> None:
        if self.lambda_max < 0:
            raise ContractError(f"lambda_max must be >= 0, got {self.lambda_max}")
        if not 0 < self.gamma <= 1:
            raise ContractError(f"gamma must lie in (0, 1], got {self.gamma}")

    @property
    def variance(self) -> float:
        return self.m2 / self.count if self.count else 0.0

    @property
    def std(self) -> float:
        return math.sqrt(max(self.variance, 0.0))

    @property
    def threshold(self) -> float:
        return self.mean + 2.0 * self.std

    def record(self, value: float) -> None:
        self.count += 1
        delta = value - self.mean
        self.mean += delta / self.count
        self.m2 += delta * (value - self.mean)


def adaptive_lambda_update(state: AdaptiveLambdaState, e_lin: float) -> float:
    """Set λ to λ_max on a spike above μ + 2σ, otherwise decay it by γ; then record e_lin.

    The comparison uses the history before `e_lin` is added.
    """
    state.last_threshold = state.threshold
    if e_lin > state.last_threshold:
        state.lam = state.lambda_max
        logger.debug("adaptive lambda reset to %.6g (E_lin %.6g > %.6g)", state.lam, e_lin, state.last_threshold)
    else:
        state.lam = state.gamma * state.lam
    state.record(float(e_lin))
    return state.lam
