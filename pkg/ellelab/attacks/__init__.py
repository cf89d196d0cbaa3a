from .attacks import (
    ATTACK_KINDS,
    AttackSpec,
    clamp_to_domain,
    fgsm,
    loss_and_input_grad,
    nfgsm,
    pgd,
    run_attack,
    sample_ball,
    uniform_noise,
)

__all__ = [
    "ATTACK_KINDS", "AttackSpec", "clamp_to_domain", "fgsm", "loss_and_input_grad", "nfgsm",
    "pgd", "run_attack", "sample_ball", "uniform_noise",
]
