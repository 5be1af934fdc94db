from __future__ import annotations

from collections.abc import Iterable
from dataclasses import dataclass

import numpy as np

from .layers import Parameter


@dataclass(frozen=True)
class OptimizerConfig:
    learning_rate: float = 0.001
    decay: float = 0.9
    epsilon: float = 1e-7

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be positive")
        if not 0 < self.decay < 1:
            raise ValueError("decay must lie in (0, 1)")
        if not self.epsilon > 0:
            raise ValueError("epsilon must be positive")


def rmsprop_step(params: Iterable[Parameter], cfg: OptimizerConfig = OptimizerConfig()) -> None:
    """In-place RMSprop update of every parameter from its current gradient."""
    for p in params:
        p.rms_cache *= cfg.decay
        p.rms_cache += (1.0 - cfg.decay) * p.grad * p.grad
        p.value -= cfg.learning_rate * p.grad / (np.sqrt(p.rms_cache) + cfg.epsilon)
