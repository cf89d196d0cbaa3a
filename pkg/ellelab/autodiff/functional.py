"""Named graph ops that have no operator-overload spelling on Var."""

from __future__ import annotations

from typing import Optional

from .graph import Var, _norm_axis


def relu(x: Var) -> Var:
    return x.graph.apply("relu", x)


def step(x: Var) -> Var:
    """1 where x > 0, else 0; carries no gradient."""
    return x.graph.apply("step", x)


def sign(x: Var) -> Var:
    return x.graph.apply("sign", x)


def absolute(x: Var) -> Var:
    return x.graph.apply("abs", x)


def softplus(x: Var) -> Var:
    return x.graph.apply("softplus", x)


def sigmoid(x: Var) -> Var:
    return x.graph.apply("sigmoid", x)


def exp(x: Var) -> Var:
    return x.graph.apply("exp", x)


def logsumexp(x: Var, axis: Optional[int] = -1) -> Var:
    return x.graph.apply("logsumexp", x, axis=_norm_axis(axis, x.ndim))


def square(x: Var) -> Var:
    return x.graph.apply("square", x)


def sqrt(x: Var) -> Var:
    return x.graph.apply("sqrt", x)


def reciprocal_safe(x: Var) -> Var:
    """1/x with 1/0 defined as 0."""
    return x.graph.apply("reciprocal_safe", x)


def dot(a: Var, b: Var, axis: Optional[int] = -1) -> Var:
    return a.graph.apply("dot", a, b, axis=_norm_axis(axis, a.ndim))


def l2_norm(x: Var, axis: Optional[int] = -1) -> Var:
    return x.graph.apply("l2_norm", x, axis=_norm_axis(axis, x.ndim))


def broadcast_to(x: Var, shape) -> Var:
    return x.graph.apply("broadcast_to", x, shape=tuple(int(n) for n in shape))
