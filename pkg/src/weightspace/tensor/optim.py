"""Adam with decoupled weight decay."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import List, Sequence

import numpy as np

from ..exceptions import ConfigError, ContractError
from .autograd import Tensor


@dataclass
class AdamState:
    lr: float = 1e-3
    betas: tuple = (0.9, 0.999)
    eps: float = 1e-8
    weight_decay: float = 0.0
    step: int = 0
    m: List[np.ndarray] = field(default_factory=list)
    v: List[np.ndarray] = field(default_factory=list)

    def __post_init__(self):
        if self.lr <= 0:
            raise ConfigError(f"Adam learning rate must be positive, got {self.lr}")
        b1, b2 = self.betas
        if not (0 <= b1 < 1 and 0 <= b2 < 1):
            raise ConfigError(f"Adam betas must lie in [0, 1), got {self.betas}")
        if self.weight_decay < 0:
            raise ConfigError(f"weight decay must be non-negative, got {self.weight_decay}")


def adam_step(state: AdamState, params: Sequence[Tensor]) -> None:
    """Apply one update in place. Gradients are read, never cleared."""
    params = list(params)
    for i, p in enumerate(params):
        if p.grad is None:
            raise ContractError(f"parameter {i} (shape {p.shape}) has no gradient; run backward first")
    if not state.m:
        state.m = [np.zeros_like(p.data) for p in params]
        state.v = [np.zeros_like(p.data) for p in params]
    elif len(state.m) != len(params):
        raise ContractError(f"optimizer tracks {len(state.m)} parameters, got {len(params)}")
    state.step += 1
    b1, b2 = state.betas
    c1 = 1.0 - b1 ** state.step
    c2 = 1.0 - b2 ** state.step
    for p, m, v in zip(params, state.m, state.v):
        if m.shape != p.shape:
            raise ContractError(f"moment buffer shape {m.shape} does not match parameter {p.shape}")
        g = p.grad
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        if state.weight_decay:
            p.data *= (1.0 - state.lr * state.weight_decay)
        update = state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
        p.data -= update.astype(p.dtype)


class Adam:
    """Thin stateful wrapper around :func:`adam_step`."""

    def __init__(self, params, lr=1e-3, betas=(0.9, 0.999), eps=1e-8, weight_decay=0.0):
        self.params = list(params)
        self.state = AdamState(lr=lr, betas=tuple(betas), eps=eps, weight_decay=weight_decay)

    def step(self) -> None:
        adam_step(self.state, self.params)

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None
