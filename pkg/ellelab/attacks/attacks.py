"""Inner maximisation over the ℓ∞ ball intersected with the [0, 1] data box."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np

from ellelab.autodiff import Graph, backward_grad
from ellelab.errors import ContractError
from ellelab.models.base import Objective

logger = logging.getLogger(__name__)

ATTACK_KINDS = ("none", "fgsm", "pgd", "nfgsm")
DATA_LOW, DATA_HIGH = 0.0, 1.0


@dataclass(frozen=True)
class AttackSpec:
    kind: str = "fgsm"
    epsilon: float = 0.0
    steps: int = 1
    step_size: Optional[float] = None
    restarts: int = 1
    noise_factor: float = 2.0
    random_start: bool = True

    def __post_init__(self) -> None:
        if self.kind not in ATTACK_KINDS:
            raise ContractError(f"attack kind must be one of {ATTACK_KINDS}, got {self.kind!r}")
        if self.epsilon < 0:
            raise ContractError(f"epsilon must be >= 0, got {self.epsilon}")
        if self.noise_factor < 0:
            raise ContractError(f"noise_factor must be >= 0, got {self.noise_factor}")
        if self.kind == "pgd":
            if self.steps < 1:
                raise ContractError(f"pgd needs steps >= 1, got {self.steps}")
            if self.restarts < 1:
                raise ContractError(f"pgd needs restarts >= 1, got {self.restarts}")
            if self.step_size is not None and self.step_size <= 0:
                raise ContractError(f"pgd step_size must be > 0, got {self.step_size}")

    @property
    def resolved_step_size(self) -> float:
        if self.step_size is not None:
            return self.step_size
        return 2.5 * self.epsilon / self.steps


def clamp_to_domain(x: np.ndarray) -> np.ndarray:
    return np.clip(x, DATA_LOW, DATA_HIGH)


def loss_and_input_grad(objective: Objective, x: np.ndarray, y: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Per-example losses at `x` and the gradient of their sum w.r.t. `x`."""
    graph = Graph()
    bound = objective.bind(graph)
    xv = graph.input(x, name="x")
    losses = bound.per_example_loss(xv, y)
    grad = backward_grad(losses.sum(), [xv])[xv]
    return losses.value.copy(), grad


def fgsm(objective: Objective, x: np.ndarray, y: np.ndarray, epsilon: float) -> np.ndarray:
    """clamp(x + ε·sign(∇_x L)), with sign(0) = 0."""
    if epsilon == 0:
        return x.copy()
    _, grad = loss_and_input_grad(objective, x, y)
    return clamp_to_domain(x + epsilon * np.sign(grad))


def uniform_noise(shape: Tuple[int, ...], radius: float, rng: np.random.Generator) -> np.ndarray:
    """Unif[-radius, radius]^shape; always consumes one draw per entry, even at radius 0."""
    return rng.uniform(-1.0, 1.0, size=shape) * radius


def nfgsm(
    objective: Objective,
    x: np.ndarray,
    y: np.ndarray,
    epsilon: float,
    noise_factor: float = 2.0,
    rng: Optional[np.random.Generator] = None,
    noise: Optional[np.ndarray] = None,
) -> np.ndarray:
    """FGSM taken from a uniformly perturbed start, without projecting back to the ε-ball.

    `noise` may be given explicitly; otherwise it is drawn from `rng` with
    half-width noise_factor·ε.
    """
    if noise is None:
        if rng is None:
            raise ContractError("nfgsm needs either rng or explicit noise")
        noise = uniform_noise(x.shape, noise_factor * epsilon, rng)
    start = x + noise
    _, grad = loss_and_input_grad(objective, start, y)
    return clamp_to_domain(start + epsilon * np.sign(grad))


def pgd(
    objective: Objective,
    x: np.ndarray,
    y: np.ndarray,
    epsilon: float,
    steps: int,
    step_size: Optional[float] = None,
    restarts: int = 1,
    rng: Optional[np.random.Generator] = None,
    random_start: bool = True,
) -> np.ndarray:
    """Projected signed-gradient ascent, keeping each example's best restart."""
    if step_size is None:
        step_size = 2.5 * epsilon / steps
    if random_start and rng is None:
        raise ContractError("pgd with random_start needs an rng")
    low = np.maximum(x - epsilon, DATA_LOW)
    high = np.minimum(x + epsilon, DATA_HIGH)
    best = x.copy()
    best_loss = np.full(x.shape[0], -np.inf)
    for restart in range(restarts):
        start = x + uniform_noise(x.shape, epsilon, rng) if random_start else x.copy()
        current = np.clip(start, low, high)
        for _ in range(steps):
            _, grad = loss_and_input_grad(objective, current, y)
            current = np.clip(current + step_size * np.sign(grad), low, high)
        losses, _ = loss_and_input_grad(objective, current, y)
        improved = losses > best_loss
        best[improved] = current[improved]
        best_loss = np.where(improved, losses, best_loss)
        logger.debug("pgd restart=%d improved=%d/%d", restart, int(improved.sum()), x.shape[0])
    return best


def sample_ball(
    x: np.ndarray,
    epsilon: float,
    rng: Optional[np.random.Generator] = None,
    clamp: bool = True,
    offsets: Optional[np.ndarray] = None,
) -> np.ndarray:
    """x + Unif[−ε, ε]^d, clamped to the data box unless `clamp` is off."""
    if epsilon < 0:
        raise ContractError(f"epsilon must be >= 0, got {epsilon}")
    if offsets is None:
        if rng is None:
            raise ContractError("sample_ball needs either rng or explicit offsets")
        offsets = uniform_noise(x.shape, epsilon, rng)
    point = x + offsets
    return clamp_to_domain(point) if clamp else point


def run_attack(
    objective: Objective,
    x: np.ndarray,
    y: np.ndarray,
    spec: AttackSpec,
    rng: Optional[np.random.Generator] = None,
    noise: Optional[np.ndarray] = None,
) -> np.ndarray:
    if spec.kind == "none":
        return x.copy()
    if spec.kind == "fgsm":
        return fgsm(objective, x, y, spec.epsilon)
    if spec.kind == "nfgsm":
        return nfgsm(objective, x, y, spec.epsilon, spec.noise_factor, rng=rng, noise=noise)
    return pgd(
        objective,
        x,
        y,
        spec.epsilon,
        spec.steps,
        step_size=spec.resolved_step_size,
        restarts=spec.restarts,
        rng=rng,
        random_start=spec.random_start,
    )
