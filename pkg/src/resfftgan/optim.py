"""Adam with a cosine-annealed learning rate."""

from __future__ import annotations

import math
from typing import Dict, List

import numpy as np

from .tensor import Parameter


def cosine_lr(step: int, total: int, lr_start: float, lr_end: float) -> float:
    """Cosine annealing from ``lr_start`` at step 0 to ``lr_end`` at ``total``."""
    if total <= 0:
        return lr_start
    t = min(max(step, 0), total) / total
    if t == 1.0:
        return lr_end
    return lr_end + 0.5 * (lr_start - lr_end) * (1.0 + math.cos(math.pi * t))


class Adam:
    def __init__(self, params: List[Parameter], lr: float = 1e-4, beta1: float = 0.5,
                 beta2: float = 0.999, eps: float = 1e-8):
        self.params = [p for p in params if p.learnable]
        names = [p.name for p in self.params]
        if len(set(names)) != len(names):
            raise ValueError("optimizer parameters need unique names")
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.t = 0
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None

    def step(self) -> None:
        self.t += 1
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        for p, m, v in zip(self.params, self.m, self.v):
            if p.grad is None:
                continue
            g = p.grad
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p.data = p.data - self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)

    def state_arrays(self, prefix: str) -> Dict[str, np.ndarray]:
        out = {f"{prefix}.t": np.array(float(self.t))}
        for p, m, v in zip(self.params, self.m, self.v):
            out[f"{prefix}.m.{p.name}"] = m
            out[f"{prefix}.v.{p.name}"] = v
        return out

    def load_state_arrays(self, prefix: str, arrays: Dict[str, np.ndarray]) -> None:
        self.t = int(arrays[f"{prefix}.t"])
        for i, p in enumerate(self.params):
            self.m[i] = arrays[f"{prefix}.m.{p.name}"].copy()
            self.v[i] = arrays[f"{prefix}.v.{p.name}"].copy()
