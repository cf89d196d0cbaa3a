from .functional import (
    absolute,
    broadcast_to,
    dot,
    exp,
    l2_norm,
    logsumexp,
    reciprocal_safe,
    relu,
    sigmoid,
    sign,
    softplus,
    sqrt,
    square,
    step,
)
from .gradcheck import FiniteDiffReport, finite_diff_check
from .graph import (
    Graph,
    Node,
    Tensor,
    Var,
    as_tensor,
    backward_grad,
    forward_eval,
    higher_order_grad,
    input_gradient,
)
from .kernels import OP_KINDS

__all__ = [
    "Graph", "Node", "Tensor", "Var", "as_tensor", "backward_grad", "forward_eval",
    "higher_order_grad", "input_gradient", "FiniteDiffReport", "finite_diff_check", "OP_KINDS",
    "absolute", "broadcast_to", "dot", "exp", "l2_norm", "logsumexp", "reciprocal_safe", "relu", "sigmoid",
    "sign", "softplus", "sqrt", "square", "step",
]
