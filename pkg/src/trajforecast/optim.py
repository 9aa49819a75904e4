"""AdamW with decoupled weight decay and the linear warm-up learning-rate rule."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass
class OptimizerState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.01
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        if self.lr <= 0:
            raise ValueError(f"learning rate must be positive, got {self.lr}")
        if self.weight_decay < 0:
            raise ValueError(f"weight decay must be non-negative, got {self.weight_decay}")


def adamw_step(
    state: OptimizerState,
    params: dict[str, np.ndarray],
    grads: dict[str, np.ndarray],
    lr: float | None = None,
) -> None:
    """Apply one AdamW update in place.

    Decay shrinks each parameter by ``lr * weight_decay`` directly rather than
    being folded into the gradient moments.  ``lr`` overrides ``state.lr`` for
    this step (used by schedules).
    """
    lr = state.lr if lr is None else lr
    state.step += 1
    t = state.step
    c1 = 1.0 - state.beta1 ** t
    c2 = 1.0 - state.beta2 ** t
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            continue
        if g.shape != p.shape:
            raise ValueError(f"gradient for {name!r} has shape {g.shape}, parameter has {p.shape}")
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros_like(p)
            state.v[name] = np.zeros_like(p)
        v = state.v[name]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * g * g
        if state.weight_decay:
            p *= 1.0 - lr * state.weight_decay
        p -= lr * (m / c1) / (np.sqrt(v / c2) + state.eps)


@dataclass(frozen=True)
class WarmupSchedule:
    d_model: int = 256
    warmup_steps: int = 4000

    def __post_init__(self):
        if self.d_model < 1 or self.warmup_steps < 1:
            raise ValueError("d_model and warmup_steps must be positive")

    def __call__(self, t: int) -> float:
        return warmup_lr(self, t)


def warmup_lr(schedule: WarmupSchedule, t: int) -> float:
    """Learning rate ``d_model**-0.5 * t / warmup_steps**1.5``.

    There is no decay branch, so the rate keeps growing linearly with ``t``;
    callers bound it by capping the number of steps.
    """
    if t < 1:
        raise ValueError(f"step must be >= 1, got {t}")
    return schedule.d_model ** -0.5 * t / schedule.warmup_steps ** 1.5
