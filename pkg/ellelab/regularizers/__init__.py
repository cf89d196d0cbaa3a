from .adaptive import AdaptiveLambdaState, adaptive_lambda_update
from .regularizers import DOUBLE_BACKPROP_KINDS, REGULARIZER_KINDS, RegularizerSpec, TermResult, compute_term
from .terms import (
    FIVE_POINT_WEIGHTS,
    LinearityDraw,
    LinearitySample,
    cosine_misalignment,
    cure_term,
    draw_linearity_sample,
    elle_2p_term,
    elle_5pt_term,
    elle_term,
    five_point_residual,
    gradalign_term,
    gradnorm_term,
    linearity_residual,
    llr_sq_term,
    recorded_input_gradient,
    taylor_residual,
)

__all__ = [
    "AdaptiveLambdaState", "adaptive_lambda_update",
    "DOUBLE_BACKPROP_KINDS", "REGULARIZER_KINDS", "RegularizerSpec", "TermResult", "compute_term",
    "FIVE_POINT_WEIGHTS", "LinearityDraw", "LinearitySample", "cosine_misalignment", "cure_term",
    "draw_linearity_sample", "elle_2p_term", "elle_5pt_term", "elle_term", "five_point_residual",
    "gradalign_term", "gradnorm_term", "linearity_residual", "llr_sq_term", "recorded_input_gradient",
    "taylor_residual",
]
