from __future__ import annotations

import math
from dataclasses import dataclass


@dataclass
class TrainConfig:
    epochs: int = 30
    batch_size: int = 64
    base_lr: float = 3e-4
    warmup_start_lr: float = 1e-6
    warmup_epochs: int = 3
    weight_decay: float = 5e-2
    betas: tuple = (0.9, 0.999)
    head_lr_multiplier: float = 10.0
    seed: int = 0

    def __post_init__(self):
        errs = []
        if self.epochs < 1:
            errs.append("epochs must be >= 1")
        if not 0 <= self.warmup_epochs < self.epochs:
            errs.append("warmup_epochs must satisfy 0 <= warmup_epochs < epochs")
        if min(self.base_lr, self.warmup_start_lr, self.head_lr_multiplier) <= 0:
            errs.append("learning rates must be positive")
        if self.batch_size < 1:
            errs.append("batch_size must be >= 1")
        if errs:
            raise ValueError("; ".join(errs))


def lr_at(step: int, cfg: TrainConfig, steps_per_epoch: int, group: str = "backbone") -> float:
    """Linear warmup from ``warmup_start_lr`` then cosine decay to 0 at the last step.

    ``group="head"`` returns the decoder rate, ``head_lr_multiplier`` times higher.
    """
    warm = cfg.warmup_epochs * steps_per_epoch
    total = cfg.epochs * steps_per_epoch
    step = min(max(step, 0), total)
    if step < warm:
        lr = cfg.warmup_start_lr + (cfg.base_lr - cfg.warmup_start_lr) * step / warm
    else:
        progress = (step - warm) / max(total - warm, 1)
        lr = 0.5 * cfg.base_lr * (1.0 + math.cos(math.pi * progress))
    return lr * cfg.head_lr_multiplier if group == "head" else lr


def lr_curve_rows(cfg: TrainConfig, steps_per_epoch: int):
    total = cfg.epochs * steps_per_epoch
    for step in range(total + 1):
        yield step, lr_at(step, cfg, steps_per_epoch), lr_at(step, cfg, steps_per_epoch, "head")


def lr_curve_csv(cfg: TrainConfig, steps_per_epoch: int) -> str:
    lines = ["step,lr,head_lr"]
    lines += [f"{s},{a:.10e},{b:.10e}" for s, a, b in lr_curve_rows(cfg, steps_per_epoch)]
    return "\n".join(lines) + "\n"
