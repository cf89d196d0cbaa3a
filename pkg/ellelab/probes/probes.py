"""Measurement-only instruments.

Nothing here updates parameters or records gradients for training: every
probe evaluates on private graphs and reports plain numbers.
"""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass
from typing import Callable, Dict, Optional

import numpy as np

from ellelab.attacks import loss_and_input_grad, sample_ball, uniform_noise
from ellelab.autodiff import Graph, dot, higher_order_grad, input_gradient
from ellelab.errors import ContractError, NonFiniteError
from ellelab.models.base import Objective, loss_values
from ellelab.regularizers.terms import ZERO_NORM, LinearityDraw, draw_linearity_sample

logger = logging.getLogger(__name__)

ELIN_TARGETS = ("loss", "logits")


@dataclass
class ProbeReport:
    metric: str
    value: float
    samples: int
    epsilon: float
    seed: Optional[int] = None
    std_error: float = 0.0

    def __post_init__(self) -> None:
        if self.samples < 1:
            raise ContractError(f"probe sample count must be >= 1, got {self.samples}")
        if not np.isfinite(self.value):
            raise NonFiniteError(f"probe {self.metric} produced a non-finite value")

    def as_row(self) -> Dict[str, object]:
        return asdict(self)


def _mean_and_error(values: np.ndarray):
    values = np.asarray(values, dtype=np.float64).reshape(-1)
    err = float(np.std(values, ddof=1) / np.sqrt(values.size)) if values.size > 1 else 0.0
    return float(np.mean(values)), err


def _outputs(objective: Objective, x: np.ndarray, y: np.ndarray, on: str) -> np.ndarray:
    if on == "loss":
        return loss_values(objective, x, y)[:, None]
    graph = Graph()
    bound = objective.bind(graph)
    if not hasattr(bound, "logits"):
        raise ContractError(f"{type(objective).__name__} has no logits to probe")
    return bound.logits(graph.input(x, name="x")).value.copy()


def elin_residual_norms(
    objective: Objective,
    draw: LinearityDraw,
    y: np.ndarray,
    on: str = "loss",
) -> np.ndarray:
    """‖f(x_c) − (1−α)f(x_a) − αf(x_b)‖₂ per example, f the loss or the logits."""
    if on not in ELIN_TARGETS:
        raise ContractError(f"estimate target must be one of {ELIN_TARGETS}, got {on!r}")
    a = draw.alpha[:, None]
    out_a = _outputs(objective, draw.x_a, y, on)
    out_b = _outputs(objective, draw.x_b, y, on)
    out_c = _outputs(objective, draw.x_c, y, on)
    return np.linalg.norm(out_c - (1.0 - a) * out_a - a * out_b, axis=1)


def estimate_elin(
    objective: Objective,
    x: np.ndarray,
    y: np.ndarray,
    epsilon: float,
    n_samples: int,
    rng: np.random.Generator,
    seed: Optional[int] = None,
    on: str = "loss",
    clamp: bool = True,
) -> ProbeReport:
    """Monte-Carlo estimate of the expected unsquared local linearity error."""
    if n_samples < 1:
        raise ContractError(f"n_samples must be >= 1, got {n_samples}")
    norms = [
        elin_residual_norms(objective, draw_linearity_sample(x, epsilon, rng, clamp=clamp), y, on=on)
        for _ in range(n_samples)
    ]
    value, err = _mean_and_error(np.concatenate(norms))
    logger.debug("elin probe on=%s eps=%.4g samples=%d value=%.6g se=%.3g", on, epsilon, n_samples, value, err)
    return ProbeReport(f"elin_{on}", value, n_samples, epsilon, seed, err)


LossHandle = Callable[[np.ndarray], float]


def scalar_loss(objective: Objective, y: np.ndarray) -> LossHandle:
    """Sum of per-example losses as a function of the input batch."""

    def handle(x: np.ndarray) -> float:
        return float(np.sum(loss_values(objective, x, y)))

    return handle


def default_fd_step(v: np.ndarray) -> float:
    return 1e-4 * max(1.0, float(np.max(np.abs(v))) if np.size(v) else 1.0)


def second_dir_derivative_fd(loss: LossHandle, x: np.ndarray, v: np.ndarray, h: Optional[float] = None) -> float:
    """(L(x+hv) − 2L(x) + L(x−hv)) / h² ≈ vᵀ∇²L(x)v."""
    if h is None:
        h = default_fd_step(v)
    if h <= 0:
        raise ContractError(f"finite-difference step must be positive, got {h}")
    x = np.asarray(x, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    return (loss(x + h * v) - 2.0 * loss(x) + loss(x - h * v)) / (h * h)


def hessian_vector_product(objective: Objective, x: np.ndarray, y: np.ndarray, v: np.ndarray) -> np.ndarray:
    """∇²_x L(x)·v by differentiating ⟨∇_x L, v⟩ once more."""
    graph = Graph()
    bound = objective.bind(graph)
    leaf = graph.input(x, name="x")
    grad = input_gradient(bound.per_example_loss(leaf, y).sum(), leaf, create_graph=True)
    directional = dot(grad, graph.constant(v, name="v"), axis=None)
    return higher_order_grad(directional, [leaf])[leaf]


def second_dir_derivative_ad(objective: Objective, x: np.ndarray, y: np.ndarray, v: np.ndarray) -> float:
    v = np.asarray(v, dtype=np.float64)
    return float(np.sum(v * hessian_vector_product(objective, x, y, v)))


def _misalignment(g1: np.ndarray, g2: np.ndarray) -> np.ndarray:
    n1 = np.linalg.norm(g1, axis=1)
    n2 = np.linalg.norm(g2, axis=1)
    valid = (n1 > ZERO_NORM) & (n2 > ZERO_NORM)
    cosine = np.zeros_like(n1)
    np.divide(np.sum(g1 * g2, axis=1), n1 * n2, out=cosine, where=valid)
    return np.where(valid, 1.0 - cosine, 0.0)


def grad_misalignment(
    objective: Objective,
    x: np.ndarray,
    y: np.ndarray,
    epsilon: float,
    rng: Optional[np.random.Generator] = None,
    eta: Optional[np.ndarray] = None,
    seed: Optional[int] = None,
    clamp: bool = True,
) -> ProbeReport:
    """Logged value of 1 − cos(∇_x L(x), ∇_x L(x + η)); never differentiated."""
    if eta is None:
        if rng is None:
            raise ContractError("grad_misalignment needs rng or an explicit eta")
        eta = uniform_noise(x.shape, epsilon, rng)
    _, g_clean = loss_and_input_grad(objective, x, y)
    _, g_noisy = loss_and_input_grad(objective, sample_ball(x, epsilon, offsets=eta, clamp=clamp), y)
    value, err = _mean_and_error(_misalignment(g_clean, g_noisy))
    return ProbeReport("grad_misalignment", value, 1, epsilon, seed, err)


def fd_gradalign_estimate(
    objective: Objective,
    x: np.ndarray,
    y: np.ndarray,
    epsilon: float,
    sigma_fd: float,
    rng: Optional[np.random.Generator] = None,
    u: Optional[np.ndarray] = None,
    v: Optional[np.ndarray] = None,
    eta: Optional[np.ndarray] = None,
    seed: Optional[int] = None,
    clamp: bool = True,
) -> ProbeReport:
    """Random-direction finite-difference stand-in for the misalignment value.

    Each gradient is replaced by a single Gaussian-direction difference, so
    only the sign of the product of the two differences survives. The result
    is piecewise constant in θ and is reported, never trained on.
    """
    if sigma_fd <= 0:
        raise ContractError(f"sigma_fd must be positive, got {sigma_fd}")
    if rng is None and (eta is None or u is None or v is None):
        raise ContractError("fd_gradalign_estimate needs rng or explicit eta, u and v")
    if eta is None:
        eta = uniform_noise(x.shape, epsilon, rng)
    if u is None:
        u = rng.standard_normal(x.shape)
    if v is None:
        v = rng.standard_normal(x.shape)
    x_eta = sample_ball(x, epsilon, offsets=eta, clamp=clamp)
    diff_clean = loss_values(objective, x + sigma_fd * u, y) - loss_values(objective, x, y)
    diff_noisy = loss_values(objective, x_eta + sigma_fd * v, y) - loss_values(objective, x_eta, y)
    cosine = np.sum(u * v, axis=1) / (np.linalg.norm(u, axis=1) * np.linalg.norm(v, axis=1))
    values = 1.0 - np.sign(diff_clean * diff_noisy) * cosine
    value, err = _mean_and_error(values)
    return ProbeReport("fd_gradalign", value, 1, epsilon, seed, err)
