"""AdamW with decoupled weight decay.

The decay multiplies parameters by (1 - lr * weight_decay) before the
moment-based update, so decay strength follows the current learning
rate and never flows through the moment estimates.  The first step with
zero decay reduces to -lr * g / (|g| + eps).
"""

import math
from dataclasses import dataclass, field

import numpy as np

from ..errors import ConfigError


@dataclass
class AdamWConfig:
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.01

    def validate(self) -> None:
        if self.lr <= 0:
            raise ConfigError(f"learning rate must be positive, got {self.lr}")
        if not 0.0 <= self.beta1 < 1.0 or not 0.0 <= self.beta2 < 1.0:
            raise ConfigError("betas must lie in [0, 1)")
        if self.eps <= 0:
            raise ConfigError(f"eps must be positive, got {self.eps}")
        if self.weight_decay < 0:
            raise ConfigError(f"weight decay must be non-negative, got {self.weight_decay}")


@dataclass
class AdamWState:
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def init_adamw(params: dict) -> AdamWState:
    """Zero first and second moments matching the parameter shapes."""
    return AdamWState(
        step=0,
        m={k: np.zeros_like(p) for k, p in params.items()},
        v={k: np.zeros_like(p) for k, p in params.items()},
    )


def adamw_step(
    params: dict,
    grads: dict,
    state: AdamWState,
    cfg: AdamWConfig,
    lr: float | None = None,
) -> None:
    """One in-place update over every parameter.

    ``lr`` overrides cfg.lr so a scheduler can vary the rate while the
    remaining hyperparameters stay fixed.
    """
    cfg.validate()
    rate = cfg.lr if lr is None else lr
    if rate <= 0:
        raise ConfigError(f"learning rate must be positive, got {rate}")
    state.step += 1
    t = state.step
    bc1 = 1.0 - math.pow(cfg.beta1, t)
    bc2 = 1.0 - math.pow(cfg.beta2, t)
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            # frozen buffer: no gradient, no decay
            continue
        dt = p.dtype.type
        if cfg.weight_decay > 0.0:
            p *= dt(1.0 - rate * cfg.weight_decay)
        m = state.m[name]
        v = state.v[name]
        m *= dt(cfg.beta1)
        m += dt(1.0 - cfg.beta1) * g
        v *= dt(cfg.beta2)
        v += dt(1.0 - cfg.beta2) * (g * g)
        mhat = m / dt(bc1)
        vhat = v / dt(bc2)
        p -= dt(rate) * mhat / (np.sqrt(vhat) + dt(cfg.eps))
