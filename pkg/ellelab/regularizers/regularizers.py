"""Dispatch from a RegularizerSpec to the term it names."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from ellelab.autodiff import Var
from ellelab.errors import ContractError
from ellelab.models.base import BoundObjective

from .terms import (
    ALPHA_MODES,
    LinearityDraw,
    LinearitySample,
    cure_term,
    elle_2p_term,
    elle_5pt_term,
    elle_term,
    gradalign_term,
    gradnorm_term,
    llr_sq_term,
)

REGULARIZER_KINDS = ("none", "elle", "elle_a", "elle_2p", "elle_5pt", "gradalign", "llr_sq", "cure", "gradnorm")
# Terms whose gradient needs the backward pass recorded as graph nodes.
DOUBLE_BACKPROP_KINDS = frozenset({"gradalign", "llr_sq", "cure", "gradnorm"})


@dataclass(frozen=True)
class RegularizerSpec:
    kind: str = "none"
    lam: float = 0.0
    gamma: float = 0.99
    alpha_mode: str = "per_example"
    clamp_samples: bool = True

    def __post_init__(self) -> None:
        if self.kind not in REGULARIZER_KINDS:
            raise ContractError(f"regularizer kind must be one of {REGULARIZER_KINDS}, got {self.kind!r}")
        if self.lam < 0:
            raise ContractError(f"lambda must be >= 0, got {self.lam}")
        if not 0 < self.gamma <= 1:
            raise ContractError(f"gamma must lie in (0, 1], got {self.gamma}")
        if self.alpha_mode not in ALPHA_MODES:
            raise ContractError(f"alpha_mode must be one of {ALPHA_MODES}, got {self.alpha_mode!r}")

    @property
    def adaptive(self) -> bool:
        return self.kind == "elle_a"


@dataclass
class TermResult:
    value: Var
    sample: Optional[LinearitySample] = None

    @property
    def e_lin(self) -> Optional[float]:
        """Batch mean of the squared linearity residual, for the ELLE family."""
        return self.sample.mean_e_lin if self.sample is not None else None


def compute_term(
    spec: RegularizerSpec,
    bound: BoundObjective,
    x: np.ndarray,
    y: np.ndarray,
    epsilon: float,
    draw: LinearityDraw,
    x_fgsm: Optional[np.ndarray] = None,
) -> Optional[TermResult]:
    kind = spec.kind
    if kind == "none":
        return None
    if kind in ("elle", "elle_a"):
        value, sample = elle_term(bound, x, y, epsilon, draw=draw)
        return TermResult(value, sample)
    if kind == "elle_2p":
        if x_fgsm is None:
            raise ContractError("elle_2p needs the FGSM point of the batch")
        value, sample = elle_2p_term(bound, x, y, x_fgsm, epsilon, draw=draw)
        return TermResult(value, sample)
    if kind == "elle_5pt":
        return TermResult(elle_5pt_term(bound, x, y, epsilon, draw=draw))
    if kind == "gradalign":
        return TermResult(gradalign_term(bound, x, y, epsilon, draw=draw, clamp=spec.clamp_samples))
    if kind == "llr_sq":
        return TermResult(llr_sq_term(bound, x, y, epsilon, draw=draw, clamp=spec.clamp_samples))
    if kind == "cure":
        return TermResult(cure_term(bound, x, y, epsilon))
    return TermResult(gradnorm_term(bound, x, y))
