from .probes import (
    ELIN_TARGETS,
    ProbeReport,
    default_fd_step,
    elin_residual_norms,
    estimate_elin,
    fd_gradalign_estimate,
    grad_misalignment,
    hessian_vector_product,
    scalar_loss,
    second_dir_derivative_ad,
    second_dir_derivative_fd,
)

__all__ = [
    "ELIN_TARGETS", "ProbeReport", "default_fd_step", "elin_residual_norms", "estimate_elin",
    "fd_gradalign_estimate", "grad_misalignment", "hessian_vector_product", "scalar_loss",
    "second_dir_derivative_ad", "second_dir_derivative_fd",
]
