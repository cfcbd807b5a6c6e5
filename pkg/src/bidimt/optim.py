"""Adam with bias correction and the warmup/decay learning-rate schedule."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .autodiff import Tensor
from .errors import ConfigError, UsageError


def lr_schedule(step: int, d_model: int, warmup: int) -> float:
    """Linear warmup to step == warmup, then inverse-sqrt decay."""
    if step < 1:
        raise UsageError(f"lr_schedule step must be >= 1, got {step}")
    return d_model ** -0.5 * min(step ** -0.5, step * warmup ** -1.5)


@dataclass
class OptimState:
    """Adam moments, one slot per named parameter."""

    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.98
    eps: float = 1e-9
    first_moment: dict = field(default_factory=dict)
    second_moment: dict = field(default_factory=dict)

    @classmethod
    def for_params(cls, params: dict, beta1: float = 0.9, beta2: float = 0.98,
                   eps: float = 1e-9) -> "OptimState":
        state = cls(step=0, beta1=beta1, beta2=beta2, eps=eps)
        for name, p in params.items():
            state.first_moment[name] = np.zeros_like(p.data)
            state.second_moment[name] = np.zeros_like(p.data)
        return state


def adam_step(params: dict, grads: dict, state: OptimState, lr: float):
    """One Adam update, in place; returns (params, state) for convenience."""
    state.step += 1
    t = state.step
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** t
    c2 = 1.0 - b2 ** t
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            continue
        if isinstance(p, Tensor):
            w = p.data
        else:
            w = p
        if g.shape != w.shape:
            raise ConfigError(f"gradient shape {g.shape} != param shape {w.shape} for '{name}'")
        m = state.first_moment[name]
        v = state.second_moment[name]
        if m.shape != w.shape:
            raise ConfigError(f"moment shape {m.shape} != param shape {w.shape} for '{name}'")
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        m_hat = m / c1
        v_hat = v / c2
        w -= (lr * m_hat / (np.sqrt(v_hat) + state.eps)).astype(w.dtype)
    return params, state


def global_norm(grads: dict) -> float:
    total = 0.0
    for g in grads.values():
        total += float(np.sum(g.astype(np.float64) ** 2))
    return float(np.sqrt(total))


def clip_by_global_norm(grads: dict, max_norm: float) -> float:
    """Scale all gradients so their global norm is at most max_norm."""
    norm = global_norm(grads)
    if norm > max_norm and norm > 0.0:
        factor = max_norm / norm
        for g in grads.values():
            g *= np.asarray(factor, dtype=g.dtype)
    return norm
