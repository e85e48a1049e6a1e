"""Adam optimizer with per-array state and optional decoupled weight decay
folded into the gradient (classic L2 form)."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.0

    @staticmethod
    def for_param(param: np.ndarray, weight_decay: float = 0.0) -> "AdamState":
        return AdamState(np.zeros_like(param, dtype=float),
                         np.zeros_like(param, dtype=float),
                         weight_decay=weight_decay)


def adam_step(state: AdamState, param: np.ndarray, grad: np.ndarray, lr: float) -> np.ndarray:
    """One bias-corrected Adam update; mutates param and state, returns param."""
    if grad.shape != param.shape:
        raise ValueError(f"grad shape {grad.shape} vs param {param.shape}")
    g = grad
    if state.weight_decay:
        g = g + state.weight_decay * param
    state.step += 1
    state.m *= state.beta1
    state.m += (1.0 - state.beta1) * g
    state.v *= state.beta2
    state.v += (1.0 - state.beta2) * g * g
    m_hat = state.m / (1.0 - state.beta1**state.step)
    v_hat = state.v / (1.0 - state.beta2**state.step)
    param -= lr * m_hat / (np.sqrt(v_hat) + state.eps)
    return param


@dataclass
class AdamGroup:
    """Named parameter arrays updated together with one learning rate."""

    params: dict
    states: dict = field(default_factory=dict)

    def __post_init__(self):
        for name, p in self.params.items():
            if name not in self.states:
                self.states[name] = AdamState.for_param(p)

    def set_weight_decay(self, wd: float):
        for s in self.states.values():
            s.weight_decay = wd

    def step(self, grads: dict, lr: float):
        for name, g in grads.items():
            if g is None:
                continue
            adam_step(self.states[name], self.params[name], g, lr)
