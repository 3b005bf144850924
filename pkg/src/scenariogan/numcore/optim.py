"""Adam and AdaBelief with bias correction.

Adam::

    m = b1*m + (1-b1)*g ;  v = b2*v + (1-b2)*g^2
    p -= lr * (m / (1-b1^t)) / (sqrt(v / (1-b2^t)) + eps)

AdaBelief replaces the second moment with the spread of the gradient
around its running mean::

    s = b2*s + (1-b2)*(g - m)^2
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .tensor import Parameter

VARIANTS = ("adam", "adabelief")


@dataclass
class OptimizerState:
    variant: str = "adam"
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        self.variant = self.variant.lower()
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown optimizer {self.variant!r}; expected one of {VARIANTS}")
        if not (0.0 < self.beta1 < 1.0 and 0.0 < self.beta2 < 1.0):
            raise ValueError("betas must lie in (0, 1)")


def optimizer_step(state: OptimizerState, params: list[Parameter]) -> None:
    """Apply one update to every parameter holding a gradient.

    Moments are created lazily as zeros. Gradients are left untouched; the
    caller zeroes them before the next accumulation.
    """
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1**state.t
    c2 = 1.0 - b2**state.t
    for p in params:
        if p.grad is None:
            continue
        g = p.grad
        key = p.name
        m = state.m.get(key)
        if m is None:
            m = state.m[key] = np.zeros_like(p.data)
            state.v[key] = np.zeros_like(p.data)
        v = state.v[key]
        m *= b1
        m += (1.0 - b1) * g
        if state.variant == "adam":
            v *= b2
            v += (1.0 - b2) * g * g
        else:
            r = g - m
            v *= b2
            v += (1.0 - b2) * r * r
        p.data -= state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)


class Optimizer:
    """Binds an :class:`OptimizerState` to a fixed parameter list."""

    def __init__(self, params: list[Parameter], variant: str = "adam", lr: float = 1e-3,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        names = [p.name for p in params]
        if len(set(names)) != len(names) or None in names:
            raise ValueError("optimizer parameters need unique names")
        self.params = list(params)
        self.state = OptimizerState(variant=variant, lr=lr, beta1=beta1, beta2=beta2, eps=eps)

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None

    def step(self) -> None:
        optimizer_step(self.state, self.params)
