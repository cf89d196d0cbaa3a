from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Callable

import numpy as np

from ellelab.errors import ContractError

from .graph import Graph, Var, as_tensor, backward_grad

logger = logging.getLogger(__name__)

# Builds a scalar node from the leaf holding the point being checked.
ScalarBuilder = Callable[[Graph, Var], Var]


@dataclass
class FiniteDiffReport:
    max_rel_error: float
    ad_grad: np.ndarray
    fd_grad: np.ndarray
    h: float
    worst_index: int

    def passed(self, tol: float) -> bool:
        return self.max_rel_error <= tol


def finite_diff_check(
    build: ScalarBuilder,
    point: np.ndarray,
    h: float = 1e-5,
    floor: float = 1e-4,
) -> FiniteDiffReport:
    """Compare the reverse-mode gradient at `point` with central differences.

    The per-coordinate error is |ad - fd| / max(|ad|, |fd|, floor). The graph is
    built once and replayed for every perturbed point, so `build` may contain
    recorded gradient computations and the check then covers them too.
    """
    if h <= 0:
        raise ContractError(f"finite-difference step must be positive, got {h}")
    point = as_tensor(point, "point")
    graph = Graph()
    leaf = graph.input(point, name="point")
    root = build(graph, leaf)
    ad = np.asarray(backward_grad(root, [leaf])[leaf], dtype=np.float64)

    fd = np.zeros_like(point)
    flat = fd.reshape(-1)
    for i in range(point.size):
        shifted = point.copy().reshape(-1)
        shifted[i] += h
        upper = float(graph.evaluate({leaf: shifted.reshape(point.shape)}, root=root).reshape(-1)[0])
        shifted[i] -= 2 * h
        lower = float(graph.evaluate({leaf: shifted.reshape(point.shape)}, root=root).reshape(-1)[0])
        flat[i] = (upper - lower) / (2 * h)
    graph.evaluate({leaf: point}, root=root)

    denom = np.maximum(np.maximum(np.abs(ad), np.abs(fd)), floor)
    errors = np.abs(ad - fd) / denom
    worst = int(np.argmax(errors)) if errors.size else 0
    report = FiniteDiffReport(
        max_rel_error=float(errors.reshape(-1)[worst]) if errors.size else 0.0,
        ad_grad=ad,
        fd_grad=fd,
        h=h,
        worst_index=worst,
    )
    logger.debug("finite_diff_check size=%d max_rel_error=%.3e", point.size, report.max_rel_error)
    return report
