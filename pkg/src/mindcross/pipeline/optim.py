from collections.abc import Sequence
from dataclasses import dataclass, field

import numpy as np

from ..config import RunConfig
from ..models.mindcross import ParameterGroup
from ..utilities.errors import DimensionError


@dataclass
class AdamState:
    """First/second moments and step counts, keyed by parameter group name."""
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    t: dict[str, int] = field(default_factory=dict)

    @classmethod
    def from_config(cls, config: RunConfig) -> "AdamState":
        return cls(config.learning_rate, config.adam_beta1, config.adam_beta2, config.adam_eps)


def adam_step(groups: Sequence[ParameterGroup], state: AdamState) -> int:
    """
    Applies one bias-corrected Adam update to the trainable groups; returns how many moved.

    A group whose gradient is absent or all zero this step keeps its parameters and moments.
    """
    updated = 0
    for group in groups:
        grad = group.tensor.grad
        if not group.trainable or grad is None or not grad.any():
            continue
        m = state.m.get(group.name)
        if m is None:
            m = state.m[group.name] = np.zeros_like(group.tensor.data)
            state.v[group.name] = np.zeros_like(group.tensor.data)
            state.t[group.name] = 0
        elif m.shape != grad.shape:
            raise DimensionError(f"Adam state for {group.name} has shape {m.shape}, "
                                 f"gradient has {grad.shape}")
        v = state.v[group.name]
        state.t[group.name] += 1
        t = state.t[group.name]

        m *= state.beta1
        m += (1.0 - state.beta1) * grad
        v *= state.beta2
        v += (1.0 - state.beta2) * grad * grad
        if state.lr == 0.0:
            continue
        m_hat = m / (1.0 - state.beta1**t)
        v_hat = v / (1.0 - state.beta2**t)
        group.tensor.data -= state.lr * m_hat / (np.sqrt(v_hat) + state.eps)
        updated += 1
    return updated
