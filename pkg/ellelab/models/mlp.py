from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Dict, List, Sequence, Tuple, Union

import numpy as np

from ellelab.autodiff import Graph, Var, dot, logsumexp, relu, softplus
from ellelab.errors import ContractError, LabelRangeError, ShapeError

logger = logging.getLogger(__name__)

ACTIVATIONS = {"relu": relu, "softplus": softplus}


@dataclass(frozen=True)
class ModelConfig:
    input_dim: int
    hidden: Tuple[int, ...]
    classes: int
    activation: str = "relu"
    seed: int = 0

    def __post_init__(self) -> None:
        object.__setattr__(self, "hidden", tuple(int(w) for w in self.hidden))
        if self.input_dim < 1:
            raise ContractError(f"input_dim must be >= 1, got {self.input_dim}")
        if self.classes < 2:
            raise ContractError(f"classes must be >= 2, got {self.classes}")
        if not self.hidden or any(w < 1 for w in self.hidden):
            raise ContractError(f"hidden widths must be a non-empty list of positive ints, got {self.hidden}")
        if self.activation not in ACTIVATIONS:
            raise ContractError(f"activation must be one of {sorted(ACTIVATIONS)}, got {self.activation!r}")

    @property
    def widths(self) -> List[int]:
        return [self.input_dim, *self.hidden, self.classes]


@dataclass
class ModelParams:
    """Weights (out × in) and biases of every layer, in forward order."""

    config: ModelConfig
    tensors: Dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self) -> None:
        widths = self.config.widths
        expected = {}
        for i, (fan_in, fan_out) in enumerate(zip(widths[:-1], widths[1:])):
            expected[f"layer{i}.weight"] = (fan_out, fan_in)
            expected[f"layer{i}.bias"] = (fan_out,)
        if list(self.tensors) != list(expected):
            raise ContractError(f"parameter names {list(self.tensors)} differ from {list(expected)}")
        for name, shape in expected.items():
            if self.tensors[name].shape != shape:
                raise ShapeError(f"{name} has shape {self.tensors[name].shape}, expected {shape}")

    @property
    def num_layers(self) -> int:
        return len(self.config.widths) - 1

    def copy(self) -> "ModelParams":
        return ModelParams(self.config, {k: v.copy() for k, v in self.tensors.items()})

    def bind(self, graph: Graph) -> "BoundMLP":
        return BoundMLP(self, graph)


class BoundMLP:
    def __init__(self, params: ModelParams, graph: Graph):
        self.params = params
        self.graph = graph
        self.parameters: Dict[str, Var] = {
            name: graph.parameter(value, name=name) for name, value in params.tensors.items()
        }
        self._act = ACTIVATIONS[params.config.activation]

    def logits(self, x: Var) -> Var:
        if x.ndim != 2 or x.shape[1] != self.params.config.input_dim:
            raise ShapeError(f"expected input of shape (batch, {self.params.config.input_dim}), got {x.shape}")
        h = x
        last = self.params.num_layers - 1
        for i in range(self.params.num_layers):
            h = h @ self.parameters[f"layer{i}.weight"].T + self.parameters[f"layer{i}.bias"]
            if i < last:
                h = self._act(h)
        return h

    def per_example_loss(self, x: Var, y: np.ndarray) -> Var:
        return cross_entropy(self.logits(x), y, reduction="none")


def model_new(config: ModelConfig) -> ModelParams:
    """Unif(±sqrt(1/fan_in)) weights and zero biases, reproducible from config.seed."""
    rng = np.random.default_rng(config.seed)
    tensors: Dict[str, np.ndarray] = {}
    widths = config.widths
    for i, (fan_in, fan_out) in enumerate(zip(widths[:-1], widths[1:])):
        bound = np.sqrt(1.0 / fan_in)
        tensors[f"layer{i}.weight"] = rng.uniform(-bound, bound, size=(fan_out, fan_in))
        tensors[f"layer{i}.bias"] = np.zeros(fan_out)
    logger.debug("model_new widths=%s activation=%s seed=%d", widths, config.activation, config.seed)
    return ModelParams(config, tensors)


def model_forward(params: ModelParams, x: Union[Var, np.ndarray]) -> Union[Var, np.ndarray]:
    """Logits for a batch.

    A Var input is differentiated in its own graph (the parameters are bound
    into that graph); an array input returns a plain array.
    """
    if isinstance(x, Var):
        return params.bind(x.graph).logits(x)
    graph = Graph()
    return params.bind(graph).logits(graph.input(x, name="x")).value.copy()


def check_labels(y: Sequence[int], batch: int, classes: int) -> np.ndarray:
    labels = np.asarray(y)
    if labels.shape != (batch,):
        raise ShapeError(f"expected {batch} labels, got shape {labels.shape}")
    if labels.size and not np.issubdtype(labels.dtype, np.integer):
        raise LabelRangeError(f"labels must be integers, got dtype {labels.dtype}")
    if labels.size and (labels.min() < 0 or labels.max() >= classes):
        raise LabelRangeError(f"labels must lie in [0, {classes}), got range [{labels.min()}, {labels.max()}]")
    return labels.astype(np.int64)


def one_hot(y: np.ndarray, classes: int) -> np.ndarray:
    out = np.zeros((y.shape[0], classes))
    out[np.arange(y.shape[0]), y] = 1.0
    return out


def cross_entropy(logits: Var, y: Sequence[int], reduction: str = "mean") -> Var:
    """−log softmax(logits)[y], written as logsumexp minus the picked logit."""
    if logits.ndim != 2:
        raise ShapeError(f"logits must be (batch, classes), got {logits.shape}")
    batch, classes = logits.shape
    labels = check_labels(y, batch, classes)
    picked = dot(logits, logits.graph.constant(one_hot(labels, classes), name="onehot"))
    per_example = logsumexp(logits, axis=-1) - picked
    if reduction == "none":
        return per_example
    if reduction == "mean":
        return per_example.mean()
    if reduction == "sum":
        return per_example.sum()
    raise ContractError(f"unknown reduction {reduction!r}")
