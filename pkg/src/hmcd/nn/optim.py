"""Adam with bias correction, operating in place on named parameter dicts."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import ShapeMismatch
from .tensor import Tensor


@dataclass
class AdamState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def adam_init(
    lr: float = 1e-3, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8
) -> AdamState:
    if not 0.0 <= beta1 < 1.0 or not 0.0 <= beta2 < 1.0:
        raise ValueError(f"betas must be in [0, 1): {beta1}, {beta2}")
    if lr <= 0:
        raise ValueError(f"learning rate must be positive: {lr}")
    return AdamState(lr=lr, beta1=beta1, beta2=beta2, eps=eps)


def adam_update(
    params: dict[str, Tensor],
    grads: dict[str, Tensor | np.ndarray],
    state: AdamState,
) -> None:
    """One Adam step: updates every named parameter that has a gradient.

    Moment estimates are bias corrected, so early steps are not damped the
    way raw moving averages would be. Parameters are mutated in place;
    callers must not hold live graphs across an update.
    """
    state.step += 1
    t = state.step
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            continue
        g = g.data if isinstance(g, Tensor) else np.asarray(g, dtype=np.float64)
        if g.shape != p.data.shape:
            raise ShapeMismatch(f"grad {name} shape {g.shape} != param {p.data.shape}")
        m = state.m.get(name)
        if m is None:
            m = np.zeros_like(p.data)
            state.m[name] = m
            state.v[name] = np.zeros_like(p.data)
        v = state.v[name]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * g * g
        m_hat = m / (1.0 - state.beta1**t)
        v_hat = v / (1.0 - state.beta2**t)
        p.data -= state.lr * m_hat / (np.sqrt(v_hat) + state.eps)
