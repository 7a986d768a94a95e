"""Adam with decoupled weight decay.

Decay is applied to the parameter before the moment update
(param <- param - lr * wd * param), then the standard bias-corrected
Adam step runs on the raw gradient.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .autodiff import Tensor
from .errors import ShapeError


@dataclass
class AdamState:
    lr: float = 0.01
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.0
    step: int = 0
    m: np.ndarray | None = field(default=None, repr=False)
    v: np.ndarray | None = field(default=None, repr=False)


def adam_step(param: np.ndarray, grad: np.ndarray, state: AdamState) -> np.ndarray:
    """One optimizer step; mutates ``state`` and returns the updated parameter."""
    param = np.asarray(param, dtype=np.float64)
    grad = np.asarray(grad, dtype=np.float64)
    if param.shape != grad.shape:
        raise ShapeError(f"parameter shape {param.shape} != gradient shape {grad.shape}")
    if state.m is None:
        state.m = np.zeros_like(param)
        state.v = np.zeros_like(param)
    if state.m.shape != param.shape:
        raise ShapeError(f"moment shape {state.m.shape} != parameter shape {param.shape}")

    out = param * (1.0 - state.lr * state.weight_decay)
    state.step += 1
    state.m = state.beta1 * state.m + (1.0 - state.beta1) * grad
    state.v = state.beta2 * state.v + (1.0 - state.beta2) * grad * grad
    m_hat = state.m / (1.0 - state.beta1**state.step)
    v_hat = state.v / (1.0 - state.beta2**state.step)
    return out - state.lr * m_hat / (np.sqrt(v_hat) + state.eps)


class Adam:
    """Tracks one AdamState per named parameter tensor."""

    def __init__(self, params: dict[str, Tensor], lr: float, weight_decay: float = 0.0,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.params = params
        self.states = {
            name: AdamState(lr=lr, beta1=beta1, beta2=beta2, eps=eps, weight_decay=weight_decay)
            for name in params
        }

    def step(self) -> None:
        for name, p in self.params.items():
            grad = p.grad if p.grad is not None else np.zeros_like(p.data)
            p.data = adam_step(p.data, grad, self.states[name])

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None
