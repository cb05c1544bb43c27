"""Adam with bias correction, no weight decay."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .model import NumericError


@dataclass
class AdamState:
    lr: float = 0.01
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "lr": self.lr, "beta1": self.beta1, "beta2": self.beta2, "eps": self.eps,
            "step": self.step, "m": self.m, "v": self.v,
        }


def adam_step(state: AdamState, weights: list, grads: list) -> tuple[list, AdamState]:
    """Return updated weights; ``state`` is advanced in place and also returned.

    A non-finite gradient, or moments that overflow, raise before anything is
    modified.
    """
    if len(weights) != len(grads):
        raise ValueError("weights and grads differ in length")
    for i, (w, g) in enumerate(zip(weights, grads)):
        if w.shape != g.shape:
            raise ValueError(f"gradient {i} has shape {g.shape}, weight has {w.shape}")
        if not np.all(np.isfinite(g)):
            raise NumericError(f"non-finite gradient for weight {i}; update aborted")
    m_prev = state.m or [np.zeros_like(w) for w in weights]
    v_prev = state.v or [np.zeros_like(w) for w in weights]
    step = state.step + 1
    bc1 = 1.0 - state.beta1 ** step
    bc2 = 1.0 - state.beta2 ** step
    new_m, new_v, updated = [], [], []
    with np.errstate(over="ignore", invalid="ignore"):
        for i, (w, g) in enumerate(zip(weights, grads)):
            m = state.beta1 * m_prev[i] + (1.0 - state.beta1) * g
            v = state.beta2 * v_prev[i] + (1.0 - state.beta2) * (g * g)
            w_new = w - state.lr * (m / bc1) / (np.sqrt(v / bc2) + state.eps)
            if not (np.all(np.isfinite(v)) and np.all(np.isfinite(w_new))):
                raise NumericError(f"Adam moments overflowed for weight {i}; update aborted")
            new_m.append(m)
            new_v.append(v)
            updated.append(w_new)
    state.m, state.v, state.step = new_m, new_v, step
    return updated, state
