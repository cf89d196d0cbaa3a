"""Forward kernels and vector-Jacobian rules for every graph op kind.

A VJP rule receives a backend `F` and expresses the backward computation with
the same op kinds as the forward pass. Run against the numpy backend it yields
plain gradient arrays; run against the graph backend it records the backward
pass as graph nodes, which is what makes gradients of gradients available.
"""

from __future__ import annotations

from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

Shape = Tuple[int, ...]


def _same_or_broadcast(a: np.ndarray, b: np.ndarray, op: str) -> Shape:
    shape = np.broadcast_shapes(a.shape, b.shape)
    # Mutual broadcasting such as (n,) with (n, 1) is almost always a bug.
    if shape != a.shape and shape != b.shape:
        raise ValueError(f"{op} operands {a.shape} and {b.shape} broadcast to {shape}")
    return shape


def _binary(fn: Callable[[np.ndarray, np.ndarray], np.ndarray], op: str):
    def kernel(values: List[np.ndarray], attrs: Dict[str, Any]) -> np.ndarray:
        a, b = values
        _same_or_broadcast(a, b, op)
        return fn(a, b)

    return kernel


def sum_to(x: np.ndarray, shape: Sequence[int]) -> np.ndarray:
    shape = tuple(shape)
    if x.shape == shape:
        return x
    lead = x.ndim - len(shape)
    if lead < 0:
        raise ValueError(f"cannot reduce {x.shape} to {shape}")
    axes = tuple(range(lead)) + tuple(
        i + lead for i, n in enumerate(shape) if n == 1 and x.shape[i + lead] != 1
    )
    reduced = x.sum(axis=axes, keepdims=True)
    return reduced.reshape(shape)


def _matmul(values: List[np.ndarray], attrs: Dict[str, Any]) -> np.ndarray:
    a, b = values
    if a.ndim != 2 or b.ndim != 2:
        raise ValueError(f"matmul expects 2-d operands, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ValueError(f"matmul inner extents differ: {a.shape} @ {b.shape}")
    return a @ b


def _transpose(values: List[np.ndarray], attrs: Dict[str, Any]) -> np.ndarray:
    (a,) = values
    if a.ndim != 2:
        raise ValueError(f"transpose expects a 2-d operand, got {a.shape}")
    return np.ascontiguousarray(a.T)


def _softplus(values: List[np.ndarray], attrs: Dict[str, Any]) -> np.ndarray:
    (a,) = values
    return np.log1p(np.exp(-np.abs(a))) + np.maximum(a, 0.0)


def _sigmoid(values: List[np.ndarray], attrs: Dict[str, Any]) -> np.ndarray:
    (a,) = values
    e = np.exp(-np.abs(a))
    return np.where(a >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


def _logsumexp(values: List[np.ndarray], attrs: Dict[str, Any]) -> np.ndarray:
    (a,) = values
    axis = attrs["axis"]
    m = np.max(a, axis=axis, keepdims=True)
    out = m + np.log(np.sum(np.exp(a - m), axis=axis, keepdims=True))
    if axis is None:
        return out.reshape(())
    return np.squeeze(out, axis=axis)


def _reciprocal_safe(values: List[np.ndarray], attrs: Dict[str, Any]) -> np.ndarray:
    (a,) = values
    out = np.zeros_like(a)
    np.divide(1.0, a, out=out, where=a != 0)
    return out


def _dot(values: List[np.ndarray], attrs: Dict[str, Any]) -> np.ndarray:
    a, b = values
    if a.shape != b.shape:
        raise ValueError(f"dot expects equal shapes, got {a.shape} and {b.shape}")
    return np.sum(a * b, axis=attrs["axis"])


def _take_rows(values: List[np.ndarray], attrs: Dict[str, Any]) -> np.ndarray:
    (a,) = values
    start, stop = attrs["start"], attrs["stop"]
    if not 0 <= start < stop <= a.shape[0]:
        raise ValueError(f"rows [{start}, {stop}) out of range for extent {a.shape[0]}")
    return a[start:stop].copy()


def _pad_rows(values: List[np.ndarray], attrs: Dict[str, Any]) -> np.ndarray:
    (a,) = values
    start, total = attrs["start"], attrs["total"]
    if start + a.shape[0] > total:
        raise ValueError(f"rows [{start}, {start + a.shape[0]}) exceed extent {total}")
    out = np.zeros((total,) + a.shape[1:])
    out[start : start + a.shape[0]] = a
    return out


def _reshape(values: List[np.ndarray], attrs: Dict[str, Any]) -> np.ndarray:
    (a,) = values
    return a.reshape(attrs["shape"]).copy()


FORWARD: Dict[str, Callable[[List[np.ndarray], Dict[str, Any]], np.ndarray]] = {
    "add": _binary(np.add, "add"),
    "sub": _binary(np.subtract, "sub"),
    "mul": _binary(np.multiply, "mul"),
    "div": _binary(np.divide, "div"),
    "scale": lambda v, at: v[0] * at["factor"],
    "add_scalar": lambda v, at: v[0] + at["value"],
    "matmul": _matmul,
    "transpose": _transpose,
    "relu": lambda v, at: np.maximum(v[0], 0.0),
    "step": lambda v, at: (v[0] > 0).astype(np.float64),
    "sign": lambda v, at: np.sign(v[0]),
    "abs": lambda v, at: np.abs(v[0]),
    "softplus": _softplus,
    "sigmoid": _sigmoid,
    "exp": lambda v, at: np.exp(v[0]),
    "logsumexp": _logsumexp,
    "sum": lambda v, at: np.asarray(np.sum(v[0], axis=at["axis"], keepdims=at["keepdims"])),
    "mean": lambda v, at: np.asarray(np.mean(v[0], axis=at["axis"], keepdims=at["keepdims"])),
    "square": lambda v, at: v[0] * v[0],
    "sqrt": lambda v, at: np.sqrt(v[0]),
    "reciprocal_safe": _reciprocal_safe,
    "dot": _dot,
    "l2_norm": lambda v, at: np.sqrt(np.sum(v[0] * v[0], axis=at["axis"])),
    "broadcast_to": lambda v, at: np.broadcast_to(v[0], at["shape"]).copy(),
    "sum_to": lambda v, at: sum_to(v[0], at["shape"]),
    "reshape": _reshape,
    "take_rows": _take_rows,
    "pad_rows": _pad_rows,
}


# -- backward ---------------------------------------------------------------


def _unbroadcast(F, g, shape: Shape):
    if tuple(g.shape) == tuple(shape):
        return g
    return F("sum_to", g, shape=tuple(shape))


def _keepdim(F, g, in_shape: Shape, axis: Optional[int], keepdims: bool = False):
    """Reshape a reduced gradient so it broadcasts against the reduced operand."""
    if axis is None:
        target = (1,) * len(in_shape)
    elif keepdims:
        return g
    else:
        target = tuple(1 if i == axis else n for i, n in enumerate(in_shape))
    if tuple(g.shape) != target:
        g = F("reshape", g, shape=target)
    return g


def _expand(F, g, in_shape: Shape, axis: Optional[int], keepdims: bool = False):
    g = _keepdim(F, g, in_shape, axis, keepdims)
    if tuple(g.shape) != tuple(in_shape):
        g = F("broadcast_to", g, shape=tuple(in_shape))
    return g


def _vjp_add(F, g, args, out, attrs, shapes, needs):
    return [_unbroadcast(F, g, shapes[0]), _unbroadcast(F, g, shapes[1])]


def _vjp_sub(F, g, args, out, attrs, shapes, needs):
    gb = None
    if needs[1]:
        gb = _unbroadcast(F, F("scale", g, factor=-1.0), shapes[1])
    return [_unbroadcast(F, g, shapes[0]), gb]


def _vjp_mul(F, g, args, out, attrs, shapes, needs):
    a, b = args
    ga = _unbroadcast(F, F("mul", g, b), shapes[0]) if needs[0] else None
    gb = _unbroadcast(F, F("mul", g, a), shapes[1]) if needs[1] else None
    return [ga, gb]


def _vjp_div(F, g, args, out, attrs, shapes, needs):
    a, b = args
    ga = _unbroadcast(F, F("div", g, b), shapes[0]) if needs[0] else None
    gb = None
    if needs[1]:
        gb = F("scale", F("mul", g, F("div", out, b)), factor=-1.0)
        gb = _unbroadcast(F, gb, shapes[1])
    return [ga, gb]


def _vjp_matmul(F, g, args, out, attrs, shapes, needs):
    a, b = args
    ga = F("matmul", g, F("transpose", b)) if needs[0] else None
    gb = F("matmul", F("transpose", a), g) if needs[1] else None
    return [ga, gb]


def _vjp_sigmoid(F, g, args, out, attrs, shapes, needs):
    one_minus = F("add_scalar", F("scale", out, factor=-1.0), value=1.0)
    return [F("mul", g, F("mul", out, one_minus))]


def _vjp_logsumexp(F, g, args, out, attrs, shapes, needs):
    (a,) = args
    axis = attrs["axis"]
    softmax = F("exp", F("sub", a, _keepdim(F, out, shapes[0], axis)))
    return [F("mul", softmax, _keepdim(F, g, shapes[0], axis))]


def _vjp_mean(F, g, args, out, attrs, shapes, needs):
    count = int(np.prod(shapes[0])) // max(int(np.prod(out.shape)), 1)
    expanded = _expand(F, g, shapes[0], attrs["axis"], attrs["keepdims"])
    return [F("scale", expanded, factor=1.0 / count)]


def _vjp_dot(F, g, args, out, attrs, shapes, needs):
    a, b = args
    ge = _keepdim(F, g, shapes[0], attrs["axis"])
    return [F("mul", b, ge) if needs[0] else None, F("mul", a, ge) if needs[1] else None]


def _vjp_l2_norm(F, g, args, out, attrs, shapes, needs):
    (a,) = args
    scaled = F("mul", g, F("reciprocal_safe", out))
    return [F("mul", a, _keepdim(F, scaled, shapes[0], attrs["axis"]))]


VJP: Dict[str, Optional[Callable[..., List[Any]]]] = {
    "add": _vjp_add,
    "sub": _vjp_sub,
    "mul": _vjp_mul,
    "div": _vjp_div,
    "scale": lambda F, g, args, out, at, sh, nd: [F("scale", g, factor=at["factor"])],
    "add_scalar": lambda F, g, args, out, at, sh, nd: [g],
    "matmul": _vjp_matmul,
    "transpose": lambda F, g, args, out, at, sh, nd: [F("transpose", g)],
    "relu": lambda F, g, args, out, at, sh, nd: [F("mul", g, F("step", args[0]))],
    "step": None,
    "sign": None,
    # sign(0) = 0 picks the zero subgradient at the kink.
    "abs": lambda F, g, args, out, at, sh, nd: [F("mul", g, F("sign", args[0]))],
    "softplus": lambda F, g, args, out, at, sh, nd: [F("mul", g, F("sigmoid", args[0]))],
    "sigmoid": _vjp_sigmoid,
    "exp": lambda F, g, args, out, at, sh, nd: [F("mul", g, out)],
    "logsumexp": _vjp_logsumexp,
    "sum": lambda F, g, args, out, at, sh, nd: [_expand(F, g, sh[0], at["axis"], at["keepdims"])],
    "mean": _vjp_mean,
    "square": lambda F, g, args, out, at, sh, nd: [F("scale", F("mul", g, args[0]), factor=2.0)],
    "sqrt": lambda F, g, args, out, at, sh, nd: [
        F("scale", F("mul", g, F("reciprocal_safe", out)), factor=0.5)
    ],
    "reciprocal_safe": lambda F, g, args, out, at, sh, nd: [
        F("scale", F("mul", g, F("square", out)), factor=-1.0)
    ],
    "dot": _vjp_dot,
    "l2_norm": _vjp_l2_norm,
    "broadcast_to": lambda F, g, args, out, at, sh, nd: [F("sum_to", g, shape=tuple(sh[0]))],
    "sum_to": lambda F, g, args, out, at, sh, nd: [F("broadcast_to", g, shape=tuple(sh[0]))],
    "reshape": lambda F, g, args, out, at, sh, nd: [F("reshape", g, shape=tuple(sh[0]))],
    "take_rows": lambda F, g, args, out, at, sh, nd: [
        F("pad_rows", g, start=at["start"], total=sh[0][0])
    ],
    "pad_rows": lambda F, g, args, out, at, sh, nd: [
        F("take_rows", g, start=at["start"], stop=at["start"] + sh[0][0])
    ],
}

OP_KINDS = tuple(FORWARD)
