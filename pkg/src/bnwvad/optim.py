"""Adam with coupled L2 weight decay (decay is added to the gradient)."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass
class AdamState:
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 5e-5
    t: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)

    def copy(self) -> "AdamState":
        return AdamState(
            self.lr, self.beta1, self.beta2, self.eps, self.weight_decay, self.t,
            {k: a.copy() for k, a in self.m.items()},
            {k: a.copy() for k, a in self.v.items()},
        )


def adam_step(params: dict[str, np.ndarray], grads: dict[str, np.ndarray], state: AdamState):
    """One bias-corrected Adam update; returns new ``(params, state)``, inputs untouched."""
    if set(params) != set(grads):
        raise ValueError(f"parameter/gradient keys differ: {sorted(set(params) ^ set(grads))}")
    new_state = state.copy()
    new_state.t = state.t + 1
    t = new_state.t
    bc1 = 1.0 - state.beta1**t
    bc2 = 1.0 - state.beta2**t

    out = {}
    for k, p in params.items():
        g = np.asarray(grads[k], dtype=np.float64)
        if g.shape != p.shape:
            raise ValueError(f"shape mismatch for {k}: {p.shape} vs {g.shape}")
        if state.weight_decay:
            g = g + state.weight_decay * p
        m = new_state.m.get(k)
        v = new_state.v.get(k)
        if m is None:
            m, v = np.zeros_like(p, dtype=np.float64), np.zeros_like(p, dtype=np.float64)
        m = state.beta1 * m + (1.0 - state.beta1) * g
        v = state.beta2 * v + (1.0 - state.beta2) * g * g
        new_state.m[k], new_state.v[k] = m, v
        out[k] = p - state.lr * (m / bc1) / (np.sqrt(v / bc2) + state.eps)
    return out, new_state
