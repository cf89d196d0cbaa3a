from .base import BoundObjective, Objective, loss_values
from .checkpoint import decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint
from .mlp import BoundMLP, ModelConfig, ModelParams, cross_entropy, model_forward, model_new, one_hot
from .surfaces import AffineSurface, HingeSurface, QuadraticSurface, RidgePolynomialSurface

__all__ = [
    "BoundObjective", "Objective", "loss_values",
    "decode_checkpoint", "encode_checkpoint", "load_checkpoint", "save_checkpoint",
    "BoundMLP", "ModelConfig", "ModelParams", "cross_entropy", "model_forward", "model_new", "one_hot",
    "AffineSurface", "HingeSurface", "QuadraticSurface", "RidgePolynomialSurface",
]
