"""Adam over a dict of named parameter arrays, plus global-norm clipping."""

from __future__ import annotations

import math

import numpy as np


def global_norm(grads: dict) -> float:
    total = 0.0
    for name in sorted(grads):
        g = grads[name]
        total += float(np.sum(g * g))
    return math.sqrt(total)


def clip_global_norm(grads: dict, max_norm: float) -> float:
    """Scale ``grads`` in place so their joint L2 norm is at most ``max_norm``."""
    norm = global_norm(grads)
    if max_norm > 0 and norm > max_norm:
        scale = max_norm / norm
        for g in grads.values():
            g *= scale
    return norm


class Adam:
    def __init__(self, params: dict, lr: float, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = params
        self.lr = lr
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.t = 0
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}

    def step(self, grads: dict, names=None):
        """Update ``self.params`` in place; ``names`` restricts the update (frozen rest)."""
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        lr_t = self.lr * math.sqrt(1.0 - b2 ** self.t) / (1.0 - b1 ** self.t)
        for name in sorted(grads):
            if names is not None and name not in names:
                continue
            g = grads[name]
            m, v = self.m[name], self.v[name]
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * (g * g)
            self.params[name] -= lr_t * m / (np.sqrt(v) + self.eps)

    def state_tensors(self) -> dict:
        out = {}
        for k in sorted(self.m):
            out[f"adam.m.{k}"] = self.m[k]
            out[f"adam.v.{k}"] = self.v[k]
        return out

    def load_state(self, tensors: dict, t: int):
        self.t = int(t)
        for k in self.m:
            if f"adam.m.{k}" in tensors:
                self.m[k][...] = tensors[f"adam.m.{k}"]
                self.v[k][...] = tensors[f"adam.v.{k}"]
