"""Mini-batch training loop shared by every trainable forecaster."""
from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field

import numpy as np

from .autograd import Tape, backward, check_finite, mse
from .data.windows import WindowSet
from .nn import flatten
from .optim import OptimizerState, WarmupSchedule, adamw_step, warmup_lr

logger = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    epochs: int = 30
    batch_size: int = 64
    lr: float = 1e-3
    weight_decay: float = 0.01
    patience: int = 5            # stale validation epochs before stopping; 0 disables
    seed: int = 0
    lr_schedule: str = "constant"   # or "warmup"
    warmup_steps: int = 4000
    d_model: int = 256              # only read by the warm-up rule


@dataclass
class TrainResult:
    train_loss: list[float] = field(default_factory=list)
    val_loss: list[float] = field(default_factory=list)
    epoch_seconds: list[float] = field(default_factory=list)
    best_epoch: int = -1
    steps: int = 0


class TrainingDiverged(RuntimeError):
    """A non-finite loss or gradient appeared.

    ``state`` holds the parameters before the failing update, which are the
    last finite ones.
    """

    def __init__(self, message: str, state: dict[str, np.ndarray], epoch: int, step: int):
        super().__init__(message)
        self.state = state
        self.epoch = epoch
        self.step = step


def _snapshot(params) -> dict[str, np.ndarray]:
    return {k: t.data.copy() for k, t in flatten(params).items()}


def _restore(params, snap: dict[str, np.ndarray]) -> None:
    for k, t in flatten(params).items():
        t.data = snap[k].copy()


def batch_loss(model, feats: dict, targets: np.ndarray) -> float:
    """Mean squared error of ``model`` on prepared inputs, evaluated without a tape."""
    total, count = 0.0, 0
    n = len(targets)
    step = 256
    for s in range(0, n, step):
        sl = slice(s, s + step)
        out = model._forward(model.params_, {k: v[sl] for k, v in feats.items()}, training=False, rng=None)
        diff = out.data - targets[sl]
        total += float((diff * diff).sum())
        count += diff.size
    return total / max(count, 1)


def train_model(model, train: WindowSet, validation: WindowSet | None = None,
                config: TrainConfig | None = None) -> TrainResult:
    """Fit ``model`` (a prepared neural forecaster) with AdamW on mean squared error.

    ``model`` must already hold ``params_`` and its normalization statistics;
    :meth:`NeuralForecaster.fit` takes care of that.  The parameters with the
    best validation loss (training loss if no validation set is given) are
    restored at the end.  Raises :class:`TrainingDiverged` on a non-finite
    loss or gradient.
    """
    cfg = config or TrainConfig()
    if len(train) == 0:
        raise ValueError("training needs at least one window")
    rng = np.random.default_rng(cfg.seed)
    feats = model._features(train)
    targets = model._targets(train)
    val = (model._features(validation), model._targets(validation)) if validation is not None and len(validation) else None
    named = flatten(model.params_)
    state = OptimizerState(lr=cfg.lr, weight_decay=cfg.weight_decay)
    schedule = WarmupSchedule(cfg.d_model, cfg.warmup_steps) if cfg.lr_schedule == "warmup" else None

    result = TrainResult()
    best, best_snap, stale = np.inf, _snapshot(model.params_), 0
    for epoch in range(cfg.epochs):
        t0 = time.perf_counter()
        order = rng.permutation(len(targets))
        running, seen = 0.0, 0
        for s in range(0, len(order), cfg.batch_size):
            idx = order[s:s + cfg.batch_size]
            with Tape() as tape:
                out = model._forward(model.params_, {k: v[idx] for k, v in feats.items()}, training=True, rng=rng)
                loss = mse(out, targets[idx])
            try:
                check_finite(loss, "training loss")
                grads = backward(tape, loss)
                for k, t in named.items():
                    check_finite(grads[t], f"gradient of {k}")
            except FloatingPointError as exc:
                raise TrainingDiverged(f"{type(model).__name__}: {exc} (epoch {epoch}, step {result.steps})",
                                       _snapshot(model.params_), epoch, result.steps) from exc
            result.steps += 1
            lr = warmup_lr(schedule, result.steps) if schedule else None
            adamw_step(state, {k: t.data for k, t in named.items()}, {k: grads[t] for k, t in named.items()}, lr=lr)
            running += float(loss.data) * len(idx)
            seen += len(idx)
        result.train_loss.append(running / seen)
        score = result.train_loss[-1]
        if val is not None:
            result.val_loss.append(batch_loss(model, *val))
            score = result.val_loss[-1]
        result.epoch_seconds.append(time.perf_counter() - t0)
        logger.info("%s epoch %d train %.5f val %s (%.1fs)", type(model).__name__, epoch, result.train_loss[-1],
                    f"{result.val_loss[-1]:.5f}" if result.val_loss else "-", result.epoch_seconds[-1])
        if score < best:
            best, best_snap, stale, result.best_epoch = score, _snapshot(model.params_), 0, epoch
        else:
            stale += 1
            if cfg.patience and stale >= cfg.patience:
                break
    _restore(model.params_, best_snap)
    return result
