"""SGD and Adam over dense master weights, with constant or cosine learning rates."""
import math
from dataclasses import dataclass, field
from typing import Dict, Iterable

import numpy as np

from ..exceptions import ConfigError
from ..models import OptimizerKind, ScheduleKind
from .layers import Parameter


def lr_at(
    step: int,
    base_lr: float,
    total_steps: int,
    schedule: ScheduleKind = ScheduleKind.CONSTANT,
    warmup_steps: int = 0,
    min_lr_ratio: float = 0.0,
) -> float:
    """Learning rate α_k for 0-based ``step``.

    Cosine decays from ``base_lr`` after a linear warmup down to
    ``min_lr_ratio * base_lr`` at ``total_steps``.
    """
    if warmup_steps > 0 and step < warmup_steps:
        return base_lr * (step + 1) / warmup_steps
    if ScheduleKind(schedule) is ScheduleKind.CONSTANT:
        return base_lr
    span = max(total_steps - warmup_steps, 1)
    progress = min(max(step - warmup_steps, 0) / span, 1.0)
    floor = base_lr * min_lr_ratio
    return floor + (base_lr - floor) * 0.5 * (1.0 + math.cos(math.pi * progress))


@dataclass
class OptimizerState:
    """Optimizer hyperparameters, schedule and per-parameter moments.

    Moments are keyed by parameter id, so they always belong to the dense
    master weights.
    """
    kind: OptimizerKind = OptimizerKind.SGD
    lr: float = 0.1
    total_steps: int = 1
    schedule: ScheduleKind = ScheduleKind.CONSTANT
    warmup_steps: int = 0
    min_lr_ratio: float = 0.0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    exp_avg: Dict[str, np.ndarray] = field(default_factory=dict)
    exp_avg_sq: Dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self) -> None:
        self.kind = OptimizerKind(self.kind)
        self.schedule = ScheduleKind(self.schedule)
        if self.lr < 0.0:
            raise ConfigError(f"Invalid learning rate: {self.lr}")
        if not 0.0 <= self.beta1 < 1.0 or not 0.0 <= self.beta2 < 1.0:
            raise ConfigError(f"Invalid Adam betas: ({self.beta1}, {self.beta2})")
        if self.eps <= 0.0:
            raise ConfigError(f"Invalid epsilon: {self.eps}")
        if not 0.0 <= self.min_lr_ratio <= 1.0:
            raise ConfigError(f"Invalid min_lr_ratio: {self.min_lr_ratio}")

    def current_lr(self) -> float:
        return lr_at(self.t, self.lr, self.total_steps, self.schedule, self.warmup_steps, self.min_lr_ratio)


def step(opt: OptimizerState, params: Iterable[Parameter]) -> float:
    """Apply one update to ``params`` and return the learning rate used.

    The gradient is the accumulated STE gradient plus the SR-STE decay term
    when a parameter carries a decay mask. Weights are replaced, not mutated,
    so arrays cached by a previous forward stay intact.
    """
    lr = opt.current_lr()
    opt.t += 1
    for param in params:
        g = param.regularized_grad()
        if opt.kind is OptimizerKind.SGD:
            update = lr * g
        else:
            m = opt.exp_avg.get(param.id, np.zeros_like(param.w))
            v = opt.exp_avg_sq.get(param.id, np.zeros_like(param.w))
            m = opt.beta1 * m + (1.0 - opt.beta1) * g
            v = opt.beta2 * v + (1.0 - opt.beta2) * (g * g)
            opt.exp_avg[param.id] = m
            opt.exp_avg_sq[param.id] = v
            m_hat = m / (1.0 - opt.beta1 ** opt.t)
            v_hat = v / (1.0 - opt.beta2 ** opt.t)
            update = lr * m_hat / (np.sqrt(v_hat) + opt.eps)
        param.w = (param.w - update).astype(param.w.dtype, copy=False)
    return lr
