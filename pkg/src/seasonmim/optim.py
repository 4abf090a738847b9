"""AdamW with linear warmup and half-cycle cosine decay."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .autodiff import ShapeError, Tensor


class OptimizerConfigError(ValueError):
    pass


def lr_at_step(step: int, base_lr: float, warmup_steps: int, total_steps: int) -> float:
    """Effective learning rate: linear warmup, then half-cycle cosine to zero."""
    if total_steps <= warmup_steps:
        raise OptimizerConfigError(
            f"total_steps ({total_steps}) must exceed warmup_steps ({warmup_steps})")
    if step < warmup_steps:
        return base_lr * step / warmup_steps
    progress = (step - warmup_steps) / (total_steps - warmup_steps)
    return base_lr * 0.5 * (1.0 + math.cos(math.pi * min(progress, 1.0)))


@dataclass
class OptimizerState:
    """Per-parameter Adam moments plus the schedule constants."""

    base_lr: float
    weight_decay: float
    warmup_steps: int
    total_steps: int
    betas: tuple[float, float] = (0.9, 0.95)
    eps: float = 1e-8
    step_count: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        if self.total_steps <= self.warmup_steps:
            raise OptimizerConfigError(
                f"total_steps ({self.total_steps}) must exceed "
                f"warmup_steps ({self.warmup_steps})")

    def current_lr(self) -> float:
        return lr_at_step(self.step_count, self.base_lr, self.warmup_steps,
                          self.total_steps)


def adamw_step(state: OptimizerState, params: dict[str, Tensor],
               grads: dict[str, np.ndarray] | None = None) -> None:
    """One decoupled-weight-decay Adam update, in place on ``params``.

    ``grads`` defaults to the ``.grad`` slots of the parameters. Weight decay
    multiplies the parameter directly (never the gradient).
    """
    lr = state.current_lr()
    b1, b2 = state.betas
    state.step_count += 1
    t = state.step_count
    for name, p in params.items():
        g = grads[name] if grads is not None else p.grad
        if g is None:
            continue
        if g.shape != p.data.shape:
            raise ShapeError(
                f"adamw_step: grad shape {g.shape} != param shape {p.data.shape} "
                f"for '{name}'")
        if name not in state.m:
            state.m[name] = np.zeros_like(p.data)
            state.v[name] = np.zeros_like(p.data)
        m = state.m[name]
        v = state.v[name]
        m *= b1
        m += (1 - b1) * g
        v *= b2
        v += (1 - b2) * g * g
        m_hat = m / (1 - b1 ** t)
        v_hat = v / (1 - b2 ** t)
        p.data -= lr * (m_hat / (np.sqrt(v_hat) + state.eps)
                        + state.weight_decay * p.data)
