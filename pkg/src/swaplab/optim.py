"""SGD with (Nesterov) momentum and coupled L2 weight decay."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ContractError
from .nn import Gradient, WeightVector


@dataclass(frozen=True)
class OptimizerConfig:
    momentum: float = 0.9
    weight_decay: float = 5e-4
    nesterov: bool = True
    # False: only dense weight matrices are decayed (not biases, gamma, beta)
    decay_bn_params: bool = False

    def __post_init__(self):
        if not 0.0 <= self.momentum < 1.0:
            raise ContractError(f"momentum must lie in [0, 1), got {self.momentum}")
        if self.weight_decay < 0:
            raise ContractError(f"weight_decay must be >= 0, got {self.weight_decay}")

    def decays(self, name: str) -> bool:
        return self.decay_bn_params or name.endswith(".W")


@dataclass
class OptimizerState:
    velocity: dict[str, np.ndarray]

    @classmethod
    def zeros_like(cls, model: WeightVector) -> "OptimizerState":
        return cls({k: np.zeros_like(v) for k, v in model.params.items()})

    def copy(self) -> "OptimizerState":
        return OptimizerState({k: v.copy() for k, v in self.velocity.items()})


def sgd_update(model: WeightVector, state: OptimizerState, grad: Gradient, lr: float,
               cfg: OptimizerConfig) -> tuple[WeightVector, OptimizerState]:
    """One step of::

        g' = grad + weight_decay * theta      (masked by cfg.decays)
        v  = momentum * v + g'
        theta -= lr * (momentum * v + g')     (nesterov)  or  lr * v

    Inputs are left untouched; new arrays are returned.
    """
    if lr < 0:
        raise ContractError(f"learning rate must be >= 0, got {lr}")
    if set(grad) != set(model.params) or set(state.velocity) != set(model.params):
        raise ContractError("gradient / velocity keys do not match the model")
    mu, wd = cfg.momentum, cfg.weight_decay
    new_params, new_vel = {}, {}
    for name, theta in model.params.items():
        g = grad[name]
        v = state.velocity[name]
        if g.shape != theta.shape or v.shape != theta.shape:
            raise ContractError(f"shape mismatch for {name}")
        if wd and cfg.decays(name):
            g = g + wd * theta
        v = mu * v + g
        step = mu * v + g if cfg.nesterov else v
        new_params[name] = theta - lr * step
        new_vel[name] = v
    return (WeightVector(new_params, {k: s.copy() for k, s in model.bn_stats.items()}),
            OptimizerState(new_vel))
