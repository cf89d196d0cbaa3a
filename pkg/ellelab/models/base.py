"""Loss-surface protocol shared by the MLP and the closed-form surfaces.

An objective is bound into a graph once; the bound view owns the parameter
leaves, so every loss built through it shares the same θ.
"""

from __future__ import annotations

from typing import Dict, Protocol

import numpy as np

from ellelab.autodiff import Graph, Var


class BoundObjective(Protocol):
    graph: Graph
    parameters: Dict[str, Var]

    def per_example_loss(self, x: Var, y: np.ndarray) -> Var:
        """Loss per row of `x`, shape (batch,)."""
        ...


class Objective(Protocol):
    def bind(self, graph: Graph) -> BoundObjective:
        ...


def loss_values(objective: Objective, x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Per-example loss as a plain array, on a throwaway graph."""
    graph = Graph()
    bound = objective.bind(graph)
    return bound.per_example_loss(graph.input(x, name="x"), y).value.copy()
