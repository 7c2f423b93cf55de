"""Adaptive-moment optimizer with decoupled weight decay, plus the
warmup-then-cosine learning-rate schedule used for all training runs."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ..errors import ContractError
from .tensor import Tensor


@dataclass
class OptimizerState:
    first_moment: list[np.ndarray]
    second_moment: list[np.ndarray]
    step_count: int
    learning_rate: float
    betas: tuple[float, float]
    weight_decay: float
    eps: float = 1e-8


class AdamW:
    """Decoupled-weight-decay adaptive-moment update.

    Deterministic given (params, grads, state). ``step()`` raises if any
    parameter is missing its gradient.
    """

    def __init__(
        self,
        params: list[Tensor],
        lr: float = 1e-4,
        betas: tuple[float, float] = (0.9, 0.999),
        weight_decay: float = 1e-6,
        eps: float = 1e-8,
    ):
        if not params:
            raise ContractError("optimizer needs at least one parameter")
        if not (0.0 < betas[0] < 1.0 and 0.0 < betas[1] < 1.0):
            raise ContractError(f"betas must lie in (0,1), got {betas}")
        self.params = list(params)
        self.state = OptimizerState(
            first_moment=[np.zeros_like(p.data) for p in self.params],
            second_moment=[np.zeros_like(p.data) for p in self.params],
            step_count=0,
            learning_rate=lr,
            betas=betas,
            weight_decay=weight_decay,
            eps=eps,
        )

    def zero_grad(self) -> None:
        for p in self.params:
            p.zero_grad()

    def step(self, lr: float | None = None) -> None:
        s = self.state
        if lr is None:
            lr = s.learning_rate
        b1, b2 = s.betas
        t = s.step_count + 1
        bc1 = 1.0 - b1**t
        bc2 = 1.0 - b2**t
        for p, m, v in zip(self.params, s.first_moment, s.second_moment):
            if p.grad is None:
                raise ContractError("optimizer step with missing gradient")
            g = p.grad
            if s.weight_decay > 0.0:
                p.data *= 1.0 - lr * s.weight_decay
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * (g * g)
            p.data -= lr * (m / bc1) / (np.sqrt(v / bc2) + s.eps)
        s.step_count = t


@dataclass
class LrSchedule:
    """Linear ramp from near zero over ``warmup_steps``, cosine decay to zero
    at ``total_steps``."""

    base_lr: float
    warmup_steps: int
    total_steps: int

    def __post_init__(self):
        if self.warmup_steps < 1 or self.total_steps < 1:
            raise ContractError("warmup_steps and total_steps must be positive")
        if self.warmup_steps > self.total_steps:
            raise ContractError("warmup cannot exceed total steps")


def lr_at(schedule: LrSchedule, step: int) -> float:
    if step < 0 or step > schedule.total_steps:
        raise ContractError(f"step {step} outside [0, {schedule.total_steps}]")
    if step < schedule.warmup_steps:
        return schedule.base_lr * (step + 1) / schedule.warmup_steps
    span = schedule.total_steps - schedule.warmup_steps
    if span == 0:
        return 0.0 if step == schedule.total_steps else schedule.base_lr
    frac = (step - schedule.warmup_steps) / span
    return schedule.base_lr * 0.5 * (1.0 + math.cos(math.pi * frac))
