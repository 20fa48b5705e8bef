"""rmsprop parameter updates.

Per parameter: g = grad + weight_decay * param, then the running mean of
squared gradients mixes in the new g^2 with weight ``sq_decay`` and the step
is -lr * g / (sqrt(cache) + eps). Epsilon sits outside the square root.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, ContractError


@dataclass(frozen=True)
class RmspropHyper:
    learning_rate: float = 0.0005
    sq_decay: float = 0.1
    weight_decay: float = 0.01
    epsilon: float = 1e-8

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ConfigError("learning_rate must be positive")
        if not 0 < self.sq_decay < 1:
            raise ConfigError("sq_decay must lie in (0, 1)")
        if self.weight_decay < 0:
            raise ConfigError("weight_decay must be nonnegative")
        if self.epsilon <= 0:
            raise ConfigError("epsilon must be positive")

    def to_dict(self) -> dict:
        return {
            "learning_rate": self.learning_rate,
            "sq_decay": self.sq_decay,
            "weight_decay": self.weight_decay,
            "epsilon": self.epsilon,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "RmspropHyper":
        return cls(**{k: float(v) for k, v in d.items()})


@dataclass
class RmspropState:
    """Per-parameter running mean of squared gradients plus a step counter."""

    cache: dict[str, np.ndarray] = field(default_factory=dict)
    step: int = 0

    @classmethod
    def for_params(cls, params: dict[str, np.ndarray]) -> "RmspropState":
        return cls(cache={k: np.zeros_like(v) for k, v in params.items()}, step=0)


def rmsprop_step(
    params: dict[str, np.ndarray],
    grads: dict[str, np.ndarray],
    state: RmspropState,
    hyper: RmspropHyper,
) -> tuple[dict[str, np.ndarray], RmspropState]:
    """Update ``params`` and ``state`` in place; returns them for chaining."""
    if set(grads) != set(params):
        missing = set(params) ^ set(grads)
        raise ContractError(f"params and grads disagree on keys: {sorted(missing)}")
    for name, p in params.items():
        g = grads[name]
        if g.shape != p.shape:
            raise ContractError(f"{name}: grad shape {g.shape} != param shape {p.shape}")
        if name not in state.cache:
            raise ContractError(f"{name}: missing optimizer state")
        c = state.cache[name]
        g = g + hyper.weight_decay * p
        c *= 1.0 - hyper.sq_decay
        c += hyper.sq_decay * (g * g)
        p -= hyper.learning_rate * g / (np.sqrt(c) + hyper.epsilon)
    state.step += 1
    return params, state
