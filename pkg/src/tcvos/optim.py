"""AdamW with decoupled weight decay."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionError
from .tensor import Tensor


@dataclass
class AdamWState:
    step_count: int = 0
    first_moment: dict = field(default_factory=dict)   # name -> array
    second_moment: dict = field(default_factory=dict)  # name -> array
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.01


class AdamW:
    """Decoupled weight decay: decay scales parameters directly and never
    enters the moment estimates."""

    def __init__(self, named_params, lr=1e-4, beta1=0.9, beta2=0.999,
                 eps=1e-8, weight_decay=0.01):
        self.params: list[tuple[str, Tensor]] = list(named_params)
        self.state = AdamWState(lr=lr, beta1=beta1, beta2=beta2, eps=eps,
                                weight_decay=weight_decay)
        for name, p in self.params:
            self.state.first_moment[name] = np.zeros_like(p.data)
            self.state.second_moment[name] = np.zeros_like(p.data)

    def step(self, grads: dict) -> None:
        """Apply one update. `grads` maps parameter tensors to arrays."""
        s = self.state
        s.step_count += 1
        bc1 = 1.0 - s.beta1 ** s.step_count
        bc2 = 1.0 - s.beta2 ** s.step_count
        for name, p in self.params:
            g = grads.get(p)
            if g is None:
                g = np.zeros_like(p.data)
            if g.shape != p.data.shape:
                raise DimensionError(
                    f"adamw: gradient shape {g.shape} vs parameter {p.data.shape} for {name}")
            m = s.first_moment[name]
            v = s.second_moment[name]
            m *= s.beta1
            m += (1.0 - s.beta1) * g
            v *= s.beta2
            v += (1.0 - s.beta2) * (g * g)
            mhat = m / bc1
            vhat = v / bc2
            if s.weight_decay:
                p.data -= (s.lr * s.weight_decay) * p.data
            p.data -= s.lr * mhat / (np.sqrt(vhat) + s.eps)
