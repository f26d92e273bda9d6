"""SGD with classic momentum plus a warmup-then-cosine learning-rate schedule.

Update rule, weight decay folded into the gradient:
    v <- mu * v + g + wd * theta
    theta <- theta - lr * v
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .tensor import Tensor


class SGD:
    def __init__(self, params: list[Tensor], momentum: float = 0.9, weight_decay: float = 0.0):
        self.params = list(params)
        self.momentum = momentum
        self.weight_decay = weight_decay
        self.velocity = [np.zeros_like(p.data) for p in self.params]
        self.step_count = 0

    def zero_grad(self) -> None:
        """Populate every parameter gradient with zeros."""
        for p in self.params:
            p.grad = np.zeros_like(p.data)

    def step(self, lr: float) -> None:
        for i, p in enumerate(self.params):
            if p.grad is None:
                raise RuntimeError(f"parameter {i} has no gradient; run zero_grad + backward before step")
            g = p.grad
            if self.weight_decay:
                g = g + self.weight_decay * p.data
            if self.momentum:
                self.velocity[i] = self.momentum * self.velocity[i] + g
                g = self.velocity[i]
            p.data -= lr * g
        self.step_count += 1


@dataclass
class LrSchedule:
    """Linear warmup to base_lr, then cosine decay to min_lr.

    Epoch-indexed from 0; lr(warmup_epochs) == base_lr, lr(total_epochs) == min_lr.
    """
    base_lr: float
    warmup_epochs: int
    total_epochs: int
    min_lr: float = 0.0

    def lr_at(self, epoch: float) -> float:
        if epoch < 0 or epoch > self.total_epochs:
            raise ValueError(f"epoch {epoch} outside [0, {self.total_epochs}]")
        if epoch < self.warmup_epochs:
            return self.base_lr * (epoch + 1) / self.warmup_epochs
        span = max(self.total_epochs - self.warmup_epochs, 1)
        progress = (epoch - self.warmup_epochs) / span
        return self.min_lr + 0.5 * (self.base_lr - self.min_lr) * (1.0 + math.cos(math.pi * progress))
