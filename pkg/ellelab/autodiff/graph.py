from __future__ import annotations

from dataclasses import dataclass
from typing import Any, Dict, List, Mapping, Optional, Sequence, Set, Tuple, Union

import numpy as np

from ellelab.errors import ContractError, NonFiniteError, ShapeError

from .kernels import FORWARD, VJP

Tensor = np.ndarray
LEAF_KINDS = ("parameter", "input", "constant")


def as_tensor(data: Any, name: str = "tensor") -> np.ndarray:
    """Copy `data` into a float64 array, rejecting NaN/Inf entries."""
    arr = np.array(data, dtype=np.float64)
    if not np.all(np.isfinite(arr)):
        raise NonFiniteError(f"{name} contains non-finite entries")
    return arr


@dataclass
class Node:
    op: str
    parents: Tuple[int, ...]
    attrs: Dict[str, Any]
    value: np.ndarray
    name: Optional[str] = None
    from_backward: bool = False
    # Gradient value inserted as a constant, i.e. without its derivation.
    detached: bool = False

    @property
    def is_leaf(self) -> bool:
        return self.op in LEAF_KINDS


class Var:
    """Handle to one node of a Graph; arithmetic on handles appends nodes."""

    __slots__ = ("graph", "index")
    __array_priority__ = 1000

    def __init__(self, graph: "Graph", index: int):
        if not 0 <= index < len(graph.nodes):
            raise ContractError(f"node index {index} out of range for graph of {len(graph.nodes)}")
        self.graph = graph
        self.index = index

    @property
    def node(self) -> Node:
        return self.graph.nodes[self.index]

    @property
    def value(self) -> np.ndarray:
        return self.graph.nodes[self.index].value

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.value.shape

    @property
    def ndim(self) -> int:
        return self.value.ndim

    def item(self) -> float:
        if self.value.size != 1:
            raise ContractError(f"item() needs a single-element value, got shape {self.shape}")
        return float(self.value.reshape(-1)[0])

    def __repr__(self) -> str:
        return f"Var({self.node.op}#{self.index}, shape={self.shape})"

    def __hash__(self) -> int:
        return hash((id(self.graph), self.index))

    def __eq__(self, other: object) -> bool:
        return isinstance(other, Var) and other.graph is self.graph and other.index == self.index

    def _lift(self, other: Any) -> "Var":
        if isinstance(other, Var):
            return other
        return self.graph.constant(other)

    def __add__(self, other: Any) -> "Var":
        if np.isscalar(other):
            return self.graph.apply("add_scalar", self, value=float(other))
        return self.graph.apply("add", self, self._lift(other))

    def __radd__(self, other: Any) -> "Var":
        if np.isscalar(other):
            return self.graph.apply("add_scalar", self, value=float(other))
        return self.graph.apply("add", self._lift(other), self)

    def __sub__(self, other: Any) -> "Var":
        if np.isscalar(other):
            return self.graph.apply("add_scalar", self, value=-float(other))
        return self.graph.apply("sub", self, self._lift(other))

    def __rsub__(self, other: Any) -> "Var":
        if np.isscalar(other):
            neg = self.graph.apply("scale", self, factor=-1.0)
            return self.graph.apply("add_scalar", neg, value=float(other))
        return self.graph.apply("sub", self._lift(other), self)

    def __mul__(self, other: Any) -> "Var":
        if np.isscalar(other):
            return self.graph.apply("scale", self, factor=float(other))
        return self.graph.apply("mul", self, self._lift(other))

    def __rmul__(self, other: Any) -> "Var":
        if np.isscalar(other):
            return self.graph.apply("scale", self, factor=float(other))
        return self.graph.apply("mul", self._lift(other), self)

    def __truediv__(self, other: Any) -> "Var":
        if np.isscalar(other):
            return self.graph.apply("scale", self, factor=1.0 / float(other))
        return self.graph.apply("div", self, self._lift(other))

    def __rtruediv__(self, other: Any) -> "Var":
        return self.graph.apply("div", self._lift(other), self)

    def __neg__(self) -> "Var":
        return self.graph.apply("scale", self, factor=-1.0)

    def __abs__(self) -> "Var":
        return self.graph.apply("abs", self)

    def __matmul__(self, other: Any) -> "Var":
        return self.graph.apply("matmul", self, self._lift(other))

    def __rmatmul__(self, other: Any) -> "Var":
        return self.graph.apply("matmul", self._lift(other), self)

    def __getitem__(self, rows: slice) -> "Var":
        if not isinstance(rows, slice) or rows.step not in (None, 1):
            raise ContractError("only contiguous row slices are supported")
        start, stop, _ = rows.indices(self.shape[0])
        return self.graph.apply("take_rows", self, start=start, stop=stop)

    @property
    def T(self) -> "Var":
        return self.graph.apply("transpose", self)

    def sum(self, axis: Optional[int] = None, keepdims: bool = False) -> "Var":
        return self.graph.apply("sum", self, axis=_norm_axis(axis, self.ndim), keepdims=keepdims)

    def mean(self, axis: Optional[int] = None, keepdims: bool = False) -> "Var":
        return self.graph.apply("mean", self, axis=_norm_axis(axis, self.ndim), keepdims=keepdims)

    def reshape(self, *shape: int) -> "Var":
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return self.graph.apply("reshape", self, shape=_resolve_shape(self.shape, shape))


def _resolve_shape(current: Tuple[int, ...], requested: Sequence[int]) -> Tuple[int, ...]:
    size = int(np.prod(current))
    requested = tuple(int(n) for n in requested)
    if requested.count(-1) == 1:
        known = int(np.prod([n for n in requested if n != -1]))
        requested = tuple(size // known if n == -1 else n for n in requested)
    if int(np.prod(requested)) != size:
        raise ShapeError(f"cannot reshape {current} to {requested}")
    return requested


def _norm_axis(axis: Optional[int], ndim: int) -> Optional[int]:
    if axis is None:
        return None
    if not -ndim <= axis < max(ndim, 1):
        raise ContractError(f"axis {axis} out of range for rank {ndim}")
    return axis % max(ndim, 1)


class Graph:
    """Append-only computation record.

    Values are computed eagerly as nodes are appended and cached on the node;
    `evaluate` replays the whole record from (re)bound leaves.
    """

    def __init__(self, check_finite: bool = True):
        self.nodes: List[Node] = []
        self.check_finite = check_finite
        self._recording_backward = False

    def __len__(self) -> int:
        return len(self.nodes)

    def _append(self, node: Node) -> Var:
        self.nodes.append(node)
        return Var(self, len(self.nodes) - 1)

    def _add_leaf(self, kind: str, value: Any, name: Optional[str], detached: bool = False) -> Var:
        arr = as_tensor(value, name or kind)
        node = Node(
            op=kind,
            parents=(),
            attrs={},
            value=arr,
            name=name,
            from_backward=self._recording_backward,
            detached=detached,
        )
        return self._append(node)

    def parameter(self, value: Any, name: Optional[str] = None) -> Var:
        return self._add_leaf("parameter", value, name)

    def input(self, value: Any, name: Optional[str] = None) -> Var:
        return self._add_leaf("input", value, name)

    def constant(self, value: Any, name: Optional[str] = None) -> Var:
        return self._add_leaf("constant", value, name)

    def leaves(self, kind: Optional[str] = None) -> List[Var]:
        return [
            Var(self, i)
            for i, node in enumerate(self.nodes)
            if node.is_leaf and (kind is None or node.op == kind)
        ]

    def _compute(self, op: str, values: List[np.ndarray], attrs: Dict[str, Any], index: int) -> np.ndarray:
        try:
            with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
                value = np.asarray(FORWARD[op](values, attrs), dtype=np.float64)
        except KeyError:
            raise ContractError(f"unknown op kind {op!r}") from None
        except (ValueError, IndexError) as exc:
            shapes = [v.shape for v in values]
            raise ShapeError(f"{exc} (operand shapes {shapes})", index, op) from exc
        if self.check_finite and not np.all(np.isfinite(value)):
            raise NonFiniteError("non-finite intermediate value (overflow)", index, op)
        return value

    def apply(self, op: str, *parents: Var, **attrs: Any) -> Var:
        for p in parents:
            if not isinstance(p, Var) or p.graph is not self:
                raise ContractError(f"{op}: operand does not belong to this graph")
        index = len(self.nodes)
        value = self._compute(op, [self.nodes[p.index].value for p in parents], attrs, index)
        node = Node(
            op=op,
            parents=tuple(p.index for p in parents),
            attrs=attrs,
            value=value,
            from_backward=self._recording_backward,
        )
        return self._append(node)

    def _resolve(self, key: Union[Var, str]) -> int:
        if isinstance(key, Var):
            if key.graph is not self:
                raise ContractError("binding refers to another graph")
            index = key.index
        else:
            matches = [i for i, n in enumerate(self.nodes) if n.is_leaf and n.name == key]
            if len(matches) != 1:
                raise ContractError(f"leaf name {key!r} matches {len(matches)} leaves")
            index = matches[0]
        if not self.nodes[index].is_leaf:
            raise ContractError(f"node {index} ({self.nodes[index].op}) is not a leaf")
        return index

    def evaluate(
        self,
        bindings: Optional[Mapping[Union[Var, str], Any]] = None,
        root: Optional[Var] = None,
    ) -> np.ndarray:
        """Replay every node from the leaves and return the root value.

        Leaves absent from `bindings` keep their current value.
        """
        resolved = {self._resolve(k): v for k, v in (bindings or {}).items()}
        for i, node in enumerate(self.nodes):
            if node.is_leaf:
                if i in resolved:
                    value = as_tensor(resolved[i], node.name or node.op)
                    if value.shape != node.value.shape:
                        raise ShapeError(
                            f"binding shape {value.shape} differs from leaf shape {node.value.shape}",
                            i,
                            node.op,
                        )
                    node.value = value
                continue
            node.value = self._compute(node.op, [self.nodes[p].value for p in node.parents], node.attrs, i)
        index = root.index if root is not None else len(self.nodes) - 1
        return self.nodes[index].value

    def ancestors(self, index: int) -> Set[int]:
        seen: Set[int] = set()
        stack = [index]
        while stack:
            i = stack.pop()
            if i in seen:
                continue
            seen.add(i)
            stack.extend(self.nodes[i].parents)
        return seen


class _NumpyBackend:
    def __call__(self, op: str, *args: np.ndarray, **attrs: Any) -> np.ndarray:
        with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
            return np.asarray(FORWARD[op](list(args), attrs), dtype=np.float64)


class _GraphBackend:
    def __init__(self, graph: Graph):
        self.graph = graph

    def __call__(self, op: str, *args: Var, **attrs: Any) -> Var:
        return self.graph.apply(op, *args, **attrs)


_NUMPY = _NumpyBackend()


def forward_eval(
    graph: Graph,
    bindings: Optional[Mapping[Union[Var, str], Any]] = None,
    root: Optional[Var] = None,
) -> np.ndarray:
    return graph.evaluate(bindings, root)


def backward_grad(
    root: Var,
    wrt: Sequence[Var],
    create_graph: bool = False,
) -> Dict[Var, Any]:
    """Reverse-mode gradients of a scalar `root` with respect to `wrt`.

    With `create_graph=True` the backward pass is itself recorded as graph
    nodes and the returned gradients are Vars that can be differentiated again.
    """
    graph = root.graph
    nodes = graph.nodes
    if nodes[root.index].value.size != 1:
        raise ContractError(f"backward root must be scalar, got shape {root.shape}")
    for w in wrt:
        if w.graph is not graph:
            raise ContractError("gradient requested for a node of another graph")

    targets = {w.index for w in wrt}
    reaches = bytearray(root.index + 1)
    for i in range(root.index + 1):
        if i in targets:
            reaches[i] = 1
        elif not nodes[i].is_leaf and any(reaches[p] for p in nodes[i].parents):
            reaches[i] = 1

    F: Any = _GraphBackend(graph) if create_graph else _NUMPY
    adjoint: Dict[int, Any] = {}
    previous = graph._recording_backward
    graph._recording_backward = create_graph
    try:
        ones = np.ones_like(nodes[root.index].value)
        adjoint[root.index] = graph.constant(ones) if create_graph else ones
        for i in range(root.index, -1, -1):
            g = adjoint.get(i)
            if g is None or not reaches[i]:
                continue
            node = nodes[i]
            if node.is_leaf:
                continue
            rule = VJP[node.op]
            if i not in targets:
                del adjoint[i]
            if rule is None:
                continue
            if create_graph:
                args = [Var(graph, p) for p in node.parents]
                out: Any = Var(graph, i)
            else:
                args = [nodes[p].value for p in node.parents]
                out = node.value
            shapes = [nodes[p].value.shape for p in node.parents]
            needs = [bool(reaches[p]) for p in node.parents]
            grads = rule(F, g, args, out, node.attrs, shapes, needs)
            for p, need, gp in zip(node.parents, needs, grads):
                if not need or gp is None:
                    continue
                prev = adjoint.get(p)
                adjoint[p] = gp if prev is None else F("add", prev, gp)
    finally:
        graph._recording_backward = previous

    result: Dict[Var, Any] = {}
    for w in wrt:
        g = adjoint.get(w.index)
        if g is None:
            zeros = np.zeros_like(nodes[w.index].value)
            g = graph.constant(zeros) if create_graph else zeros
        elif not create_graph and not np.all(np.isfinite(g)):
            raise NonFiniteError("non-finite gradient", w.index, nodes[w.index].op)
        result[w] = g
    return result


def input_gradient(root: Var, x: Var, create_graph: bool = False) -> Var:
    """Gradient of `root` w.r.t. `x`, returned as a node of the same graph.

    Without `create_graph` the gradient enters the graph as a detached
    constant; `higher_order_grad` refuses to differentiate through it.
    """
    grad = backward_grad(root, [x], create_graph=create_graph)[x]
    if create_graph:
        return grad
    return root.graph._add_leaf("constant", grad, name="detached_grad", detached=True)


def higher_order_grad(scalar: Var, wrt: Sequence[Var]) -> Dict[Var, np.ndarray]:
    """Gradient of a scalar built from recorded input-gradients, e.g. ∇_θ g(∇_x L)."""
    graph = scalar.graph
    lineage = graph.ancestors(scalar.index)
    if any(graph.nodes[i].detached for i in lineage):
        raise ContractError(
            "scalar depends on a gradient computed without create_graph; "
            "recompute it with create_graph=True to differentiate through it"
        )
    if not any(graph.nodes[i].from_backward for i in lineage):
        raise ContractError("scalar does not contain a recorded gradient computation")
    return backward_grad(scalar, wrt)

