"""Adam optimizer and the dimension-scaled infinity-norm gradient clip."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .autograd import GraphError, Tensor

__all__ = ["clip_gradient_inf", "adam_step", "AdamState", "Adam"]


def clip_gradient_inf(g: np.ndarray, dim: int) -> np.ndarray:
    """Clamp every component of ``g`` into [-10/sqrt(dim), +10/sqrt(dim)].

    ``dim`` is the number of scalar decision variables in the parameter
    group ``g`` belongs to.
    """
    if dim <= 0:
        raise GraphError(f"clip dimension must be positive, got {dim}")
    bound = 10.0 / math.sqrt(dim)
    return np.clip(g, -bound, bound)


@dataclass
class AdamState:
    """First/second moment accumulators and the shared step counter."""

    m: list[np.ndarray]
    v: list[np.ndarray]
    t: int = 0

    @classmethod
    def for_params(cls, params: Sequence[Tensor]) -> "AdamState":
        return cls(
            m=[np.zeros_like(p.data) for p in params],
            v=[np.zeros_like(p.data) for p in params],
        )


def adam_step(
    params: Sequence[Tensor],
    grads: Sequence[np.ndarray],
    state: AdamState,
    lr: float,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps_adam: float = 1e-8,
) -> None:
    """One bias-corrected Adam update, applied to ``params`` in place."""
    if len(params) != len(grads) or len(params) != len(state.m):
        raise GraphError("params, grads and state must be parallel sequences")
    state.t += 1
    correct1 = 1.0 - beta1**state.t
    correct2 = 1.0 - beta2**state.t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        if g.shape != p.data.shape:
            raise GraphError(f"gradient shape {g.shape} does not match parameter {p.data.shape}")
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * (g * g)
        p.data -= lr * (m / correct1) / (np.sqrt(v / correct2) + eps_adam)


@dataclass
class Adam:
    """Stateful wrapper around :func:`adam_step` for a parameter list."""

    params: Sequence[Tensor]
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    state: AdamState = field(init=False)

    def __post_init__(self):
        self.params = list(self.params)
        self.state = AdamState.for_params(self.params)

    def step(self, grads: Optional[Sequence[np.ndarray]] = None) -> None:
        if grads is None:
            grads = []
            for p in self.params:
                grads.append(np.zeros_like(p.data) if p.grad is None else p.grad)
        adam_step(self.params, grads, self.state, self.lr, self.beta1, self.beta2, self.eps)

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None
