from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from .tensor import Tensor


@dataclass
class Adam:
    """Adaptive-moment optimizer with bias correction.

    A step whose gradients contain a non-finite value is skipped entirely
    and counted in ``skipped``.  ``lr_scale`` maps parameter-name prefixes
    to learning-rate multipliers (first matching prefix wins).
    """

    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step_count: int = 0
    skipped: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    lr_scale: dict = field(default_factory=dict)

    def rate(self, name: str) -> float:
        for prefix, k in self.lr_scale.items():
            if name.startswith(prefix):
                return self.lr * k
        return self.lr

    def step(self, params: Mapping[str, Tensor], grads: Mapping[str, np.ndarray]) -> bool:
        for name, p in params.items():
            g = grads.get(name)
            if g is not None and g.shape != p.shape:
                raise ValueError(f"gradient for {name} has shape {g.shape}, parameter has {p.shape}")
        if not all(np.all(np.isfinite(g)) for g in grads.values()):
            self.skipped += 1
            return False
        self.step_count += 1
        t = self.step_count
        c1 = 1.0 - self.beta1 ** t
        c2 = 1.0 - self.beta2 ** t
        for name, p in params.items():
            g = grads.get(name)
            if g is None:
                continue
            m = self.m.get(name)
            if m is None:
                m = self.m[name] = np.zeros_like(p.data)
                self.v[name] = np.zeros_like(p.data)
            v = self.v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p.data -= (self.rate(name) * (m / c1) / (np.sqrt(v / c2) + self.eps)).astype(p.data.dtype)
        return True


def optimizer_step(state: Adam, params: Mapping[str, Tensor], grads: Mapping[str, np.ndarray]) -> bool:
    return state.step(params, grads)
