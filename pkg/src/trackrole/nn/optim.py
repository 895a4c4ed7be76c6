"""Adam and the warmup-then-linear-decay learning-rate schedule."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

PEAK_LR = 5e-5
WARMUP_FRACTION = 0.1


class NumericError(ArithmeticError):
    pass


@dataclass
class AdamState:
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(params: dict, grads: dict, state: AdamState, lr: float) -> None:
    """One in-place Adam update of ``params`` (name -> ndarray).

    Missing gradients count as zero. Raises NumericError naming the first
    parameter whose gradient is not finite, before anything is modified.
    """
    for name, g in grads.items():
        if g is not None and not np.all(np.isfinite(g)):
            raise NumericError(f"non-finite gradient for parameter {name!r}")
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** state.t
    c2 = 1.0 - b2 ** state.t
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            g = np.zeros_like(p)
        elif g.shape != p.shape:
            raise ValueError(f"gradient shape {g.shape} != parameter shape {p.shape} for {name!r}")
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros_like(p)
            state.v[name] = np.zeros_like(p)
        v = state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        if lr:
            p -= (lr * (m / c1) / (np.sqrt(v / c2) + state.eps)).astype(p.dtype, copy=False)


class Adam:
    def __init__(self, named_params, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = dict(named_params)
        self.state = AdamState(beta1, beta2, eps)

    def step(self, lr: float):
        adam_step({n: p.data for n, p in self.params.items()},
                  {n: p.grad for n, p in self.params.items()}, self.state, lr)

    def zero_grad(self):
        for p in self.params.values():
            p.grad = None


@dataclass(frozen=True)
class LrSchedule:
    total_steps: int
    peak: float = PEAK_LR
    warmup_steps: int | None = None

    def __post_init__(self):
        if self.total_steps < 1:
            raise ValueError("total_steps must be >= 1")
        if self.warmup_steps is None:
            object.__setattr__(self, "warmup_steps", math.floor(WARMUP_FRACTION * self.total_steps))
        if not 0 <= self.warmup_steps < self.total_steps:
            raise ValueError(f"warmup_steps {self.warmup_steps} not in [0, {self.total_steps})")


def lr_at(schedule: LrSchedule, step: int) -> float:
    """Linear warmup 0 -> peak over warmup_steps, then linear decay to 0 at total_steps."""
    if not 0 <= step <= schedule.total_steps:
        raise ValueError(f"step {step} outside [0, {schedule.total_steps}]")
    w = schedule.warmup_steps
    if step < w:
        return schedule.peak * step / w
    return schedule.peak * (schedule.total_steps - step) / (schedule.total_steps - w)
