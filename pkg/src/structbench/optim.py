"""Gradient-based parameter updates: Adam (synthesis) and SGD+momentum (training)."""

from __future__ import annotations

from typing import Sequence

import numpy as np

from .tensor import Tensor, TensorError


class MissingGradError(TensorError):
    """adam_step / sgd_step called on a parameter without a populated grad."""


class AdamState:
    """First/second moment buffers and step counter for a set of parameters."""

    def __init__(self, params: Sequence[Tensor]):
        self.m = [np.zeros_like(p.data) for p in params]
        self.v = [np.zeros_like(p.data) for p in params]
        self.t = 0


def adam_step(params: Sequence[Tensor], state: AdamState, lr: float,
              beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8) -> None:
    """One Adam update with bias correction. Grads must already be populated."""
    state.t += 1
    t = state.t
    for i, p in enumerate(params):
        if p.grad is None:
            raise MissingGradError(f"parameter {i} has no gradient")
        g = p.grad
        state.m[i] = beta1 * state.m[i] + (1.0 - beta1) * g
        state.v[i] = beta2 * state.v[i] + (1.0 - beta2) * (g * g)
        m_hat = state.m[i] / (1.0 - beta1 ** t)
        v_hat = state.v[i] / (1.0 - beta2 ** t)
        p.data -= lr * m_hat / (np.sqrt(v_hat) + eps)


class MomentumState:
    """Velocity buffers for SGD with momentum."""

    def __init__(self, params: Sequence[Tensor]):
        self.velocity = [np.zeros_like(p.data) for p in params]


def sgd_step(params: Sequence[Tensor], state: MomentumState, lr: float,
             momentum: float = 0.9) -> None:
    """One SGD+momentum update. Grads must already be populated."""
    for i, p in enumerate(params):
        if p.grad is None:
            raise MissingGradError(f"parameter {i} has no gradient")
        state.velocity[i] = momentum * state.velocity[i] + p.grad
        p.data -= lr * state.velocity[i]
