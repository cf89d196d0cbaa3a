"""Closed-form loss surfaces with known gradients and curvature.

Each surface ignores the labels and implements the same bind protocol as the
MLP, so attacks, regularizers and probes run on them unchanged and their
results can be checked against hand-derived values.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Dict, Optional, Sequence

import numpy as np

from ellelab.autodiff import Graph, Var, relu
from ellelab.errors import ShapeError


def _column(x: Var, vec: Var) -> Var:
    """Row-wise inner product ⟨x_i, vec⟩ as shape (batch,)."""
    return (x @ vec.reshape(-1, 1)).reshape(x.shape[0])


def _check_dim(x: Var, dim: int) -> None:
    if x.ndim != 2 or x.shape[1] != dim:
        raise ShapeError(f"expected input of shape (batch, {dim}), got {x.shape}")


@dataclass
class _BoundSurface:
    graph: Graph
    parameters: Dict[str, Var]
    surface: Any

    def per_example_loss(self, x: Var, y: np.ndarray) -> Var:
        return self.surface.evaluate(self.parameters, x)


@dataclass
class AffineSurface:
    """L(x) = ⟨w, x⟩ + b."""

    w: np.ndarray
    b: float = 0.0

    def __post_init__(self) -> None:
        self.w = np.asarray(self.w, dtype=np.float64).reshape(-1)

    @property
    def dim(self) -> int:
        return self.w.shape[0]

    def bind(self, graph: Graph) -> _BoundSurface:
        params = {"w": graph.parameter(self.w, name="w"), "b": graph.parameter(np.array([self.b]), name="b")}
        return _BoundSurface(graph, params, self)

    def evaluate(self, p: Dict[str, Var], x: Var) -> Var:
        _check_dim(x, self.dim)
        return _column(x, p["w"]) + p["b"]

    def gradient(self, x: np.ndarray) -> np.ndarray:
        return np.broadcast_to(self.w, np.shape(x)).copy()


@dataclass
class QuadraticSurface:
    """L(x) = (x − c)ᵀ Q (x − c) + ⟨g, x⟩, Hessian Q + Qᵀ."""

    q: np.ndarray
    c: Optional[np.ndarray] = None
    g: Optional[np.ndarray] = None

    def __post_init__(self) -> None:
        self.q = np.asarray(self.q, dtype=np.float64)
        d = self.q.shape[0]
        if self.q.shape != (d, d):
            raise ShapeError(f"quadratic form must be square, got {self.q.shape}")
        self.c = np.zeros(d) if self.c is None else np.asarray(self.c, dtype=np.float64).reshape(d)
        self.g = np.zeros(d) if self.g is None else np.asarray(self.g, dtype=np.float64).reshape(d)

    @classmethod
    def squared_norm(cls, dim: int) -> "QuadraticSurface":
        return cls(np.eye(dim))

    @classmethod
    def random(cls, dim: int, rng: np.random.Generator) -> "QuadraticSurface":
        return cls(rng.normal(size=(dim, dim)), rng.uniform(0, 1, size=dim), rng.normal(size=dim))

    @property
    def dim(self) -> int:
        return self.q.shape[0]

    @property
    def hessian(self) -> np.ndarray:
        return self.q + self.q.T

    def directional_second(self, v: np.ndarray) -> float:
        v = np.asarray(v, dtype=np.float64)
        return float(v @ self.hessian @ v)

    def bind(self, graph: Graph) -> _BoundSurface:
        params = {
            "q": graph.parameter(self.q, name="q"),
            "c": graph.parameter(self.c, name="c"),
            "g": graph.parameter(self.g, name="g"),
        }
        return _BoundSurface(graph, params, self)

    def evaluate(self, p: Dict[str, Var], x: Var) -> Var:
        _check_dim(x, self.dim)
        centred = x - p["c"]
        return ((centred @ p["q"]) * centred).sum(axis=1) + _column(x, p["g"])

    def value(self, x: np.ndarray) -> np.ndarray:
        x = np.atleast_2d(x)
        centred = x - self.c
        return np.einsum("bi,ij,bj->b", centred, self.q, centred) + x @ self.g

    def gradient(self, x: np.ndarray) -> np.ndarray:
        x = np.atleast_2d(x)
        return (x - self.c) @ self.hessian.T + self.g


@dataclass
class RidgePolynomialSurface:
    """L(x) = Σ_k coeffs[k] · (⟨u, x⟩ − shift)^k, a polynomial along one direction."""

    u: np.ndarray
    coeffs: Sequence[float]
    shift: float = 0.0

    def __post_init__(self) -> None:
        self.u = np.asarray(self.u, dtype=np.float64).reshape(-1)
        self.coeffs = [float(c) for c in self.coeffs]

    @property
    def dim(self) -> int:
        return self.u.shape[0]

    def bind(self, graph: Graph) -> _BoundSurface:
        return _BoundSurface(graph, {"u": graph.parameter(self.u, name="u")}, self)

    def evaluate(self, p: Dict[str, Var], x: Var) -> Var:
        _check_dim(x, self.dim)
        s = _column(x, p["u"]) - self.shift
        total = None
        power = None
        for k, coef in enumerate(self.coeffs):
            if k == 0:
                term = s * 0.0 + coef
            else:
                power = s if power is None else power * s
                term = power * coef
            total = term if total is None else total + term
        return total

    def second_derivative(self, t: float) -> float:
        """p''(t) of the section polynomial."""
        return float(sum(k * (k - 1) * c * t ** (k - 2) for k, c in enumerate(self.coeffs) if k >= 2))

    def directional_second(self, x: np.ndarray, v: np.ndarray) -> float:
        t = float(np.dot(self.u, x)) - self.shift
        return float(np.dot(self.u, v)) ** 2 * self.second_derivative(t)


@dataclass
class HingeSurface:
    """Piecewise-linear L(x) = ⟨w_neg, x⟩ + κ·relu(⟨v, x⟩).

    The two linear pieces are w_neg on ⟨v, x⟩ ≤ 0 and w_neg + κv on the other
    side. The defaults give the counterexample on which the FGSM-anchored
    two-point linearity error is blind: at x = (½, ½), ε = ½ the FGSM point is
    the origin, which lies on the kink, and the surface is positively
    homogeneous along every ray through it.
    """

    w_neg: np.ndarray = field(default_factory=lambda: np.array([0.0, -1.5]))
    v: np.ndarray = field(default_factory=lambda: np.array([2.0, -1.0]))
    kappa: float = -0.5

    def __post_init__(self) -> None:
        self.w_neg = np.asarray(self.w_neg, dtype=np.float64).reshape(-1)
        self.v = np.asarray(self.v, dtype=np.float64).reshape(-1)
        if self.w_neg.shape != self.v.shape:
            raise ShapeError(f"w_neg {self.w_neg.shape} and v {self.v.shape} differ")

    @property
    def dim(self) -> int:
        return self.v.shape[0]

    @property
    def w_pos(self) -> np.ndarray:
        return self.w_neg + self.kappa * self.v

    def bind(self, graph: Graph) -> _BoundSurface:
        params = {"w_neg": graph.parameter(self.w_neg, name="w_neg"), "v": graph.parameter(self.v, name="v")}
        return _BoundSurface(graph, params, self)

    def evaluate(self, p: Dict[str, Var], x: Var) -> Var:
        _check_dim(x, self.dim)
        return _column(x, p["w_neg"]) + relu(_column(x, p["v"])) * self.kappa

    def value(self, x: np.ndarray) -> np.ndarray:
        x = np.atleast_2d(x)
        return x @ self.w_neg + self.kappa * np.maximum(x @ self.v, 0.0)
