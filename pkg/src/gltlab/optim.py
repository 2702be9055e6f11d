"""Adam with decoupled weight decay, l1 subgradients, [0,1] mask clamping,
and frozen-zero entry support."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .autodiff import Tensor
from .errors import NotBackwarded


@dataclass
class AdamParam:
    """One optimized tensor plus its update policy.

    ``is_mask`` switches on [0,1] clamping and switches off weight decay.
    ``l1`` adds an l1 subgradient (l1 * sign(value), sign(0)=0) to the
    gradient before the moment update. ``active`` marks trainable entries;
    entries outside it are pinned to exactly 0.
    """

    tensor: Tensor
    is_mask: bool = False
    l1: float = 0.0
    active: np.ndarray | None = None


@dataclass
class AdamState:
    params: list[AdamParam]
    lr: float
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.0
    step_count: int = 0
    _m: list[np.ndarray] = field(default_factory=list)
    _v: list[np.ndarray] = field(default_factory=list)

    def __post_init__(self):
        if not self._m:
            self._m = [np.zeros_like(p.tensor.values) for p in self.params]
            self._v = [np.zeros_like(p.tensor.values) for p in self.params]


def adam_step(state: AdamState) -> None:
    """One Adam update over all registered parameters.

    Decoupled weight decay applies to non-mask tensors only; masks get the
    l1 subgradient augmentation, are clamped to [0,1] after the step, and
    keep their frozen-zero entries at exactly 0 (zero gradient, zero
    moments, zero value).
    """
    state.step_count += 1
    t = state.step_count
    bc1 = 1.0 - state.beta1 ** t
    bc2 = 1.0 - state.beta2 ** t
    for p, m, v in zip(state.params, state._m, state._v):
        if p.tensor.grad is None:
            raise NotBackwarded("parameter has no gradient; run backward first")
        g = p.tensor.grad
        if p.active is not None:
            g = g * p.active
        if p.l1 != 0.0:
            l1g = p.l1 * np.sign(p.tensor.values)
            if p.active is not None:
                l1g = l1g * p.active
            g = g + l1g
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * g * g
        if not p.is_mask and state.weight_decay != 0.0:
            p.tensor.values -= state.lr * state.weight_decay * p.tensor.values
        p.tensor.values -= state.lr * (m / bc1) / (np.sqrt(v / bc2) + state.eps)
        if p.is_mask:
            np.clip(p.tensor.values, 0.0, 1.0, out=p.tensor.values)
        if p.active is not None:
            p.tensor.values[~p.active] = 0.0
