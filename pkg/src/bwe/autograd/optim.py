"""Trainable parameters and the Adam update."""
from __future__ import annotations

import numpy as np

from .tensor import AutogradError, Tensor


class Parameter:
    """A named trainable tensor together with its Adam moment estimates."""

    def __init__(self, name: str, data, dtype=np.float32):
        self.name = name
        self.tensor = Tensor(np.array(data, dtype=dtype), requires_grad=True, name=name)
        self.adam_m = np.zeros_like(self.tensor.data)
        self.adam_v = np.zeros_like(self.tensor.data)
        self.step_count = 0

    @property
    def data(self) -> np.ndarray:
        return self.tensor.data

    @property
    def grad(self):
        return self.tensor.grad

    @property
    def shape(self):
        return self.tensor.shape

    def zero_grad(self):
        self.tensor.zero_grad()

    def __repr__(self):
        return f"Parameter({self.name!r}, shape={self.shape})"


def adam_step(params, lr: float, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
    """Bias-corrected Adam update, applied in place to every parameter."""
    params = list(params)
    for p in params:
        if p.grad is None:
            raise AutogradError(f"adam_step: parameter {p.name!r} has no gradient")
    for p in params:
        dt = p.data.dtype.type
        g = p.grad
        p.step_count += 1
        t = p.step_count
        p.adam_m *= dt(beta1)
        p.adam_m += dt(1 - beta1) * g
        p.adam_v *= dt(beta2)
        p.adam_v += dt(1 - beta2) * (g * g)
        m_hat = p.adam_m / dt(1 - beta1 ** t)
        v_hat = p.adam_v / dt(1 - beta2 ** t)
        p.tensor.data -= dt(lr) * m_hat / (np.sqrt(v_hat) + dt(eps))
