"""Adam with bias correction."""
from __future__ import annotations

import math

import numpy as np

from .tensor import NumericalError


def adam_step(param: np.ndarray, grad: np.ndarray, m: np.ndarray, v: np.ndarray, t: int,
              lr: float = 1e-3, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
    """One bias-corrected Adam update; returns new ``(param, m, v)``."""
    if t < 1:
        raise ValueError(f"Adam step counter starts at 1, got {t}")
    dt = param.dtype.type
    m = dt(beta1) * m + dt(1 - beta1) * grad
    v = dt(beta2) * v + dt(1 - beta2) * grad * grad
    if lr == 0:
        return param, m, v
    mhat = m / dt(1 - beta1 ** t)
    vhat = v / dt(1 - beta2 ** t)
    return param - dt(lr) * mhat / (np.sqrt(vhat) + dt(eps)), m, v


class Adam:
    def __init__(self, named_params, lr: float = 1e-3, betas=(0.9, 0.999), eps: float = 1e-8):
        self.params = dict(named_params)
        self.lr = lr
        self.betas = tuple(betas)
        self.eps = eps
        self.t = 0
        self.m = {n: np.zeros_like(p.data) for n, p in self.params.items()}
        self.v = {n: np.zeros_like(p.data) for n, p in self.params.items()}

    def step(self, lr: float | None = None) -> None:
        lr = self.lr if lr is None else lr
        for n, p in self.params.items():
            if p.grad is None:
                raise RuntimeError(f"parameter {n} has no gradient; call zero_grad before backward")
            if not np.isfinite(p.grad).all():
                raise NumericalError(f"non-finite gradient in parameter {n}")
        self.t += 1
        b1, b2 = self.betas
        for n, p in self.params.items():
            p.data, self.m[n], self.v[n] = adam_step(
                p.data, p.grad, self.m[n], self.v[n], self.t, lr, b1, b2, self.eps)

    def state_dict(self) -> dict:
        out = {}
        for n in self.params:
            out[f"optim/m/{n}"] = self.m[n]
            out[f"optim/v/{n}"] = self.v[n]
        out["optim/step"] = np.array([self.t], dtype=np.float64)
        return out

    def load_state_dict(self, state: dict) -> None:
        for n, p in self.params.items():
            self.m[n] = state[f"optim/m/{n}"].astype(p.data.dtype, copy=True)
            self.v[n] = state[f"optim/v/{n}"].astype(p.data.dtype, copy=True)
        self.t = int(state["optim/step"][0])


def cosine_lr(base: float, step: int, total: int) -> float:
    return 0.5 * base * (1.0 + math.cos(math.pi * min(step, total) / max(total, 1)))
