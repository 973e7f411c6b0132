"""SGD with a triangular cyclic learning-rate schedule.

The rate climbs linearly from base_lr to max_lr over step_size optimizer
steps, falls back to base_lr over the next step_size, and repeats:
lr(0) = base_lr, lr(step_size) = max_lr, lr(2*step_size) = base_lr.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import ConfigError


@dataclass(frozen=True)
class CyclicLR:
    base_lr: float = 1e-4
    max_lr: float = 1e-3
    step_size: int = 100

    def __post_init__(self):
        if self.base_lr <= 0 or self.max_lr < self.base_lr:
            raise ConfigError(f"need 0 < base_lr <= max_lr, got {self.base_lr}, {self.max_lr}")
        if self.step_size < 1:
            raise ConfigError(f"step_size must be >= 1, got {self.step_size}")


def cyclic_lr(sched: CyclicLR, step: int) -> float:
    cycle = np.floor(1.0 + step / (2.0 * sched.step_size))
    x = np.abs(step / sched.step_size - 2.0 * cycle + 1.0)
    return float(sched.base_lr + (sched.max_lr - sched.base_lr) * max(0.0, 1.0 - x))


class SGD:
    """Plain SGD with optional momentum over a network's parameters.

    ``step`` applies the accumulated gradients at the scheduled rate,
    advances the step counter, and zeroes the gradients.
    """

    def __init__(self, network, sched: CyclicLR | None = None, momentum: float = 0.0):
        self.network = network
        self.sched = sched if sched is not None else CyclicLR()
        if not 0.0 <= momentum < 1.0:
            raise ConfigError(f"momentum must be in [0, 1), got {momentum}")
        self.momentum = momentum
        self.step_count = 0
        self.velocity = {name: np.zeros_like(p) for name, p, _ in network.param_triples()}

    @property
    def lr(self) -> float:
        return cyclic_lr(self.sched, self.step_count)

    def step(self) -> None:
        lr = self.lr
        for name, p, g in self.network.param_triples():
            if self.momentum > 0.0:
                v = self.velocity[name]
                v *= self.momentum
                v += g
                p -= lr * v
            else:
                p -= lr * g
        self.step_count += 1
        self.network.zero_grads()
