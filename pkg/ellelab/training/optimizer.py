from __future__ import annotations

from typing import Dict

import numpy as np

from ellelab.errors import ContractError


class SGD:
    """Heavy-ball SGD with L2 weight decay added to the gradient.

    g ← g + wd·θ; buf ← m·buf + g (buf = g on the first step); θ ← θ − lr·buf.
    Decay applies to every parameter, biases included.
    """

    def __init__(self, momentum: float = 0.9, weight_decay: float = 5e-4):
        if not 0 <= momentum < 1:
            raise ContractError(f"momentum must lie in [0, 1), got {momentum}")
        if weight_decay < 0:
            raise ContractError(f"weight_decay must be >= 0, got {weight_decay}")
        self.momentum = momentum
        self.weight_decay = weight_decay
        self.buffers: Dict[str, np.ndarray] = {}

    def step(self, params: Dict[str, np.ndarray], grads: Dict[str, np.ndarray], lr: float) -> None:
        for name, theta in params.items():
            grad = grads[name]
            if self.weight_decay:
                grad = grad + self.weight_decay * theta
            if self.momentum:
                buf = self.buffers.get(name)
                buf = grad.copy() if buf is None else self.momentum * buf + grad
                self.buffers[name] = buf
                grad = buf
            theta -= lr * grad
