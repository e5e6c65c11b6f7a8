"""Bias-corrected Adam over named parameter dicts."""

from __future__ import annotations

import numpy as np

from .autodiff import Tensor


class OptimizerState:
    """First/second-moment accumulators plus a strictly increasing step counter."""

    def __init__(self, params: dict[str, Tensor], lr: float = 1e-4,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.params = params
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.step_count = 0
        self.m = {k: np.zeros_like(p.data) for k, p in params.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in params.items()}


def adam_step(state: OptimizerState) -> None:
    """One in-place Adam update; every parameter must carry a gradient."""
    missing = [k for k, p in state.params.items() if p.grad is None]
    if missing:
        raise ValueError(f"adam_step: missing gradients for {missing}")
    state.step_count += 1
    t = state.step_count
    c1 = 1.0 - state.beta1 ** t
    c2 = 1.0 - state.beta2 ** t
    for k, p in state.params.items():
        g = p.grad
        state.m[k] = state.beta1 * state.m[k] + (1.0 - state.beta1) * g
        state.v[k] = state.beta2 * state.v[k] + (1.0 - state.beta2) * (g * g)
        mhat = state.m[k] / c1
        vhat = state.v[k] / c2
        p.data = p.data - state.lr * mhat / (np.sqrt(vhat) + state.eps)


def zero_grads(params: dict[str, Tensor]) -> None:
    for p in params.values():
        p.zero_grad()
