"""Local-linearity and input-gradient regularisation terms.

Every term takes a BoundObjective, so its parameter leaves are the ones the
adversarial loss of the same step uses, and returns a scalar graph node that is
the batch mean of a non-negative per-example quantity. Random draws come from
`rng` or are injected through `draw` so that closed-form checks can pin them.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np

from ellelab.attacks import clamp_to_domain, sample_ball, uniform_noise
from ellelab.autodiff import Var, dot, input_gradient, l2_norm, reciprocal_safe, square, step
from ellelab.errors import ContractError
from ellelab.models.base import BoundObjective

ALPHA_MODES = ("per_example", "shared")
FIVE_POINT_WEIGHTS = (-1.0 / 12.0, 4.0 / 3.0, -5.0 / 2.0, 4.0 / 3.0, -1.0 / 12.0)
ZERO_NORM = 1e-12


@dataclass
class LinearityDraw:
    """Random inputs of one linearity sample, before any loss is evaluated.

    `offsets_a` is the raw ball offset behind x_a; terms that need one random
    perturbation (GradAlign η, LLR δ) reuse it.
    """

    x_a: np.ndarray
    x_b: np.ndarray
    alpha: np.ndarray
    offsets_a: Optional[np.ndarray] = None

    def __post_init__(self) -> None:
        self.x_a = np.asarray(self.x_a, dtype=np.float64)
        self.x_b = np.asarray(self.x_b, dtype=np.float64)
        alpha = np.asarray(self.alpha, dtype=np.float64).reshape(-1)
        if alpha.size == 1:
            alpha = np.full(self.x_a.shape[0], alpha[0])
        if alpha.shape != (self.x_a.shape[0],):
            raise ContractError(f"alpha must be a scalar or one value per row, got shape {alpha.shape}")
        if np.any(alpha < 0) or np.any(alpha > 1):
            raise ContractError("alpha must lie in [0, 1]")
        self.alpha = alpha

    @property
    def x_c(self) -> np.ndarray:
        a = self.alpha[:, None]
        return (1.0 - a) * self.x_a + a * self.x_b


@dataclass
class LinearitySample:
    x_a: np.ndarray
    x_b: np.ndarray
    alpha: np.ndarray
    x_c: np.ndarray
    residual: np.ndarray
    e_lin: np.ndarray

    @property
    def mean_e_lin(self) -> float:
        return float(np.mean(self.e_lin))


def draw_linearity_sample(
    x: np.ndarray,
    epsilon: float,
    rng: np.random.Generator,
    alpha_mode: str = "per_example",
    clamp: bool = True,
) -> LinearityDraw:
    """Draw x_a, then x_b, then α, in that order."""
    if alpha_mode not in ALPHA_MODES:
        raise ContractError(f"alpha_mode must be one of {ALPHA_MODES}, got {alpha_mode!r}")
    offsets_a = uniform_noise(x.shape, epsilon, rng)
    offsets_b = uniform_noise(x.shape, epsilon, rng)
    alpha = rng.uniform(0.0, 1.0, size=x.shape[0] if alpha_mode == "per_example" else 1)
    return LinearityDraw(
        x_a=sample_ball(x, epsilon, offsets=offsets_a, clamp=clamp),
        x_b=sample_ball(x, epsilon, offsets=offsets_b, clamp=clamp),
        alpha=alpha,
        offsets_a=offsets_a,
    )


def _resolve_draw(
    x: np.ndarray,
    epsilon: float,
    rng: Optional[np.random.Generator],
    draw: Optional[LinearityDraw],
    clamp: bool = True,
) -> LinearityDraw:
    if draw is not None:
        return draw
    if rng is None:
        raise ContractError("a random term needs either rng or an explicit draw")
    return draw_linearity_sample(x, epsilon, rng, clamp=clamp)


def stacked_losses(bound: BoundObjective, points, y: np.ndarray):
    """Evaluate the loss at several same-shaped batches in one forward pass."""
    batch = points[0].shape[0]
    leaf = bound.graph.input(np.concatenate(points, axis=0), name="stacked_x")
    losses = bound.per_example_loss(leaf, np.tile(np.asarray(y), len(points)))
    return [losses[i * batch : (i + 1) * batch] for i in range(len(points))]


def linearity_residual(
    bound: BoundObjective,
    x_a: np.ndarray,
    x_b: np.ndarray,
    alpha: np.ndarray,
    y: np.ndarray,
) -> Tuple[Var, np.ndarray]:
    """L(x_c) − (1−α)L(x_a) − αL(x_b) per example, with x_c on the segment."""
    a = np.asarray(alpha, dtype=np.float64)
    x_c = (1.0 - a)[:, None] * x_a + a[:, None] * x_b
    loss_a, loss_b, loss_c = stacked_losses(bound, [x_a, x_b, x_c], y)
    g = bound.graph
    residual = loss_c - loss_a * g.constant(1.0 - a) - loss_b * g.constant(a)
    return residual, x_c


def _linearity_term(bound, x_a, x_b, alpha, y) -> Tuple[Var, LinearitySample]:
    residual, x_c = linearity_residual(bound, x_a, x_b, alpha, y)
    per_example = square(residual)
    sample = LinearitySample(
        x_a=x_a,
        x_b=x_b,
        alpha=np.asarray(alpha),
        x_c=x_c,
        residual=residual.value.copy(),
        e_lin=per_example.value.copy(),
    )
    return per_example.mean(), sample


def elle_term(
    bound: BoundObjective,
    x: np.ndarray,
    y: np.ndarray,
    epsilon: float,
    rng: Optional[np.random.Generator] = None,
    draw: Optional[LinearityDraw] = None,
    clamp: bool = True,
) -> Tuple[Var, LinearitySample]:
    """Squared convex-combination residual at one random (x_a, x_b, α) draw.

    Only first-order differentiation is needed for ∇_θ of the result.
    """
    draw = _resolve_draw(x, epsilon, rng, draw, clamp)
    return _linearity_term(bound, draw.x_a, draw.x_b, draw.alpha, y)


def elle_2p_term(
    bound: BoundObjective,
    x: np.ndarray,
    y: np.ndarray,
    x_fgsm: np.ndarray,
    epsilon: float,
    rng: Optional[np.random.Generator] = None,
    draw: Optional[LinearityDraw] = None,
    clamp: bool = True,
) -> Tuple[Var, LinearitySample]:
    """Two-point variant: the FGSM point replaces the random x_b."""
    draw = _resolve_draw(x, epsilon, rng, draw, clamp)
    return _linearity_term(bound, draw.x_a, np.asarray(x_fgsm, dtype=np.float64), draw.alpha, y)


def five_point_points(x_a: np.ndarray, x_b: np.ndarray):
    return [x_a, (3.0 * x_a + x_b) / 4.0, (x_a + x_b) / 2.0, (x_a + 3.0 * x_b) / 4.0, x_b]


def five_point_residual(bound: BoundObjective, x_a: np.ndarray, x_b: np.ndarray, y: np.ndarray) -> Var:
    """Fourth-order second-difference stencil along [x_a, x_b], per example.

    The points are spaced a quarter of the segment apart, so on a quadratic the
    value is D²_{x_a−x_b}L / 16.
    """
    losses = stacked_losses(bound, five_point_points(x_a, x_b), y)
    total = None
    for weight, loss in zip(FIVE_POINT_WEIGHTS, losses):
        term = loss * weight
        total = term if total is None else total + term
    return total


def elle_5pt_term(
    bound: BoundObjective,
    x: np.ndarray,
    y: np.ndarray,
    epsilon: float,
    rng: Optional[np.random.Generator] = None,
    draw: Optional[LinearityDraw] = None,
    clamp: bool = True,
) -> Var:
    draw = _resolve_draw(x, epsilon, rng, draw, clamp)
    return square(five_point_residual(bound, draw.x_a, draw.x_b, y)).mean()


def recorded_input_gradient(bound: BoundObjective, x: np.ndarray, y: np.ndarray, name: str = "x"):
    """Per-example loss at `x` and its input gradient, recorded for double backprop."""
    leaf = bound.graph.input(x, name=name)
    losses = bound.per_example_loss(leaf, y)
    return losses, input_gradient(losses.sum(), leaf, create_graph=True)


def cosine_misalignment(g1: Var, g2: Var) -> Var:
    """1 − cos(g1, g2) per row; rows where either norm is below 1e-12 give 0."""
    n1 = l2_norm(g1, axis=-1)
    n2 = l2_norm(g2, axis=-1)
    mask = step(n1 - ZERO_NORM) * step(n2 - ZERO_NORM)
    cosine = dot(g1, g2, axis=-1) * reciprocal_safe(n1 * n2)
    return mask * (1.0 - cosine)


def _ball_offsets(x, epsilon, rng, draw, explicit):
    if explicit is not None:
        return np.asarray(explicit, dtype=np.float64)
    if draw is not None and draw.offsets_a is not None:
        return draw.offsets_a
    if rng is None:
        raise ContractError("a random term needs rng, an explicit draw or explicit offsets")
    return uniform_noise(x.shape, epsilon, rng)


def gradalign_term(
    bound: BoundObjective,
    x: np.ndarray,
    y: np.ndarray,
    epsilon: float,
    rng: Optional[np.random.Generator] = None,
    eta: Optional[np.ndarray] = None,
    draw: Optional[LinearityDraw] = None,
    clamp: bool = True,
) -> Var:
    """1 − cos(∇_x L(x), ∇_x L(x + η)), differentiable w.r.t. θ."""
    eta = _ball_offsets(x, epsilon, rng, draw, eta)
    _, g_clean = recorded_input_gradient(bound, x, y, name="x")
    _, g_noisy = recorded_input_gradient(bound, sample_ball(x, epsilon, offsets=eta, clamp=clamp), y, name="x_eta")
    return cosine_misalignment(g_clean, g_noisy).mean()


def taylor_residual(bound: BoundObjective, x: np.ndarray, delta: np.ndarray, y: np.ndarray) -> Var:
    """L(x+δ) − L(x) − δᵀ∇_x L(x) per example, with ∇_x L recorded."""
    loss_x, grad_x = recorded_input_gradient(bound, x, y, name="x")
    loss_shift = bound.per_example_loss(bound.graph.input(x + delta, name="x_delta"), y)
    return loss_shift - loss_x - dot(bound.graph.constant(delta, name="delta"), grad_x, axis=-1)


def llr_sq_term(
    bound: BoundObjective,
    x: np.ndarray,
    y: np.ndarray,
    epsilon: float,
    rng: Optional[np.random.Generator] = None,
    delta: Optional[np.ndarray] = None,
    draw: Optional[LinearityDraw] = None,
    clamp: bool = True,
) -> Var:
    """Squared first-order Taylor residual at a random δ in the ball.

    With clamping on, δ is replaced by the step actually taken inside the box.
    """
    delta = _ball_offsets(x, epsilon, rng, draw, delta)
    if clamp:
        delta = clamp_to_domain(x + delta) - x
    return square(taylor_residual(bound, x, delta, y)).mean()


def cure_term(bound: BoundObjective, x: np.ndarray, y: np.ndarray, epsilon: float) -> Var:
    """‖∇_x L(x) − ∇_x L(x + δ_FGSM)‖₂ per example; δ_FGSM uses the sign of ∇_x L(x)."""
    _, g_clean = recorded_input_gradient(bound, x, y, name="x")
    delta = clamp_to_domain(x + epsilon * np.sign(g_clean.value)) - x
    _, g_shift = recorded_input_gradient(bound, x + delta, y, name="x_fgsm")
    return l2_norm(g_clean - g_shift, axis=-1).mean()


def gradnorm_term(bound: BoundObjective, x: np.ndarray, y: np.ndarray) -> Var:
    """‖∇_x L(x)‖₂² per example. Not zero on affine losses."""
    _, g_clean = recorded_input_gradient(bound, x, y, name="x")
    return square(g_clean).sum(axis=1).mean()
