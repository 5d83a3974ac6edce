"""Training and per-frame evaluation on in-memory videos."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
import torch
import torch.nn.functional as F

from ..blocks import VideoModel, partition_parameters
from ..core import ClipSpec
from ..metrics import PhaseSequence
from ..sampling import build_grid, grid_indices, sample_clip
from .schedule import TrainConfig, lr_at

log = logging.getLogger(__name__)

PIXEL_MEAN, PIXEL_STD = 0.5, 0.25


class NaNLoss(FloatingPointError):
    pass


@dataclass
class Video:
    video_id: str
    frames: np.ndarray  # (L, C, H, W) float in [0, 1]
    labels: np.ndarray | None = None

    def __len__(self):
        return len(self.frames)


def as_videos(items) -> list:
    out = []
    for v in items:
        frames = v.frames if hasattr(v, "frames") and not callable(v.frames) else v.frames(np.arange(len(v)))
        out.append(Video(v.video_id, np.asarray(frames, dtype=np.float32), getattr(v, "labels", None)))
    return out


def clip_batch(model: VideoModel, video: Video, targets, clip: ClipSpec, dtype=torch.float32):
    """Normalised pixel tensors (and grid framesets for dual-path) for ``targets``."""
    idx = np.stack([sample_clip(len(video), int(t), clip) for t in targets])
    pixels = (video.frames[idx] - PIXEL_MEAN) / PIXEL_STD
    grid = None
    if model.dual_path:
        G, R = model.cfg.grid_side, model.cfg.grid_interval
        grids = []
        for t in targets:
            gi = grid_indices(len(video), int(t), G, R)
            grids.append(build_grid(video.frames[gi], G, gi).pixels)
        grid = torch.as_tensor((np.stack(grids) - PIXEL_MEAN) / PIXEL_STD, dtype=dtype)
    return torch.as_tensor(pixels, dtype=dtype), grid


def build_optimizer(model: VideoModel, cfg: TrainConfig) -> torch.optim.AdamW:
    """AdamW over the tunable partition only.

    Four groups: {adapter, head} x {decayed, not decayed}. Biases, norms and
    router scalars (ndim < 2) are not decayed.
    """
    part = partition_parameters(model)
    params = dict(model.named_parameters())
    groups = {}
    for name in part.tunable:
        p = params[name]
        kind = "head" if name.startswith("head.") else "backbone"
        decay = p.ndim >= 2
        groups.setdefault((kind, decay), []).append(p)
    param_groups = [
        {"params": ps, "group": kind, "weight_decay": cfg.weight_decay if decay else 0.0, "lr": cfg.warmup_start_lr}
        for (kind, decay), ps in sorted(groups.items())
    ]
    return torch.optim.AdamW(param_groups, lr=cfg.warmup_start_lr, betas=tuple(cfg.betas), weight_decay=cfg.weight_decay)


def set_lr(optimizer, step: int, cfg: TrainConfig, steps_per_epoch: int) -> None:
    for g in optimizer.param_groups:
        g["lr"] = lr_at(step, cfg, steps_per_epoch, g.get("group", "backbone"))


def train_step(model: VideoModel, optimizer, pixels, labels, grid=None) -> float:
    model.train()
    optimizer.zero_grad(set_to_none=True)
    logits = model(pixels, grid)
    loss = F.cross_entropy(logits, torch.as_tensor(labels, dtype=torch.long))
    if not torch.isfinite(loss):
        raise NaNLoss(f"non-finite loss {loss.item()} (logit range {logits.min().item()}..{logits.max().item()})")
    loss.backward()
    optimizer.step()
    return float(loss.item())


@dataclass
class TrainResult:
    losses: list = field(default_factory=list)
    steps: int = 0
    steps_per_epoch: int = 0


def train(model: VideoModel, videos, cfg: TrainConfig, clip: ClipSpec, optimizer=None,
          start_step: int = 0, progress=None, max_steps: int | None = None) -> TrainResult:
    """Train on every frame of every video as a prediction target.

    ``start_step`` skips steps already taken (resuming); ``max_steps`` stops
    early. Both keep the schedule and data order of the full run.
    """
    items = [(vi, t) for vi, v in enumerate(videos) for t in range(len(v))]
    steps_per_epoch = math.ceil(len(items) / cfg.batch_size)
    optimizer = optimizer or build_optimizer(model, cfg)
    torch.manual_seed(cfg.seed)
    rng = np.random.default_rng(cfg.seed)
    result = TrainResult(steps_per_epoch=steps_per_epoch)
    dtype = next(model.parameters()).dtype
    step = 0
    for epoch in range(cfg.epochs):
        order = rng.permutation(len(items))
        for b in range(steps_per_epoch):
            if max_steps is not None and step >= max_steps:
                break
            if step < start_step:
                step += 1
                continue
            batch = [items[i] for i in order[b * cfg.batch_size:(b + 1) * cfg.batch_size]]
            pix, grids, labels = [], [], []
            for vi, t in batch:
                p, g = clip_batch(model, videos[vi], [t], clip, dtype)
                pix.append(p)
                grids.append(g)
                labels.append(int(videos[vi].labels[t]))
            pixels = torch.cat(pix)
            grid = torch.cat(grids) if model.dual_path else None
            set_lr(optimizer, step, cfg, steps_per_epoch)
            result.losses.append(train_step(model, optimizer, pixels, labels, grid))
            step += 1
        log.info("epoch %d loss %.4f", epoch, result.losses[-1] if result.losses else float("nan"))
        if progress:
            progress(epoch, result)
    result.steps = step
    return result


@torch.no_grad()
def predict_logits(model: VideoModel, video: Video, clip: ClipSpec, batch_size: int = 64) -> torch.Tensor:
    model.eval()
    dtype = next(model.parameters()).dtype
    out = []
    for start in range(0, len(video), batch_size):
        targets = range(start, min(start + batch_size, len(video)))
        pixels, grid = clip_batch(model, video, targets, clip, dtype)
        out.append(model(pixels, grid))
    return torch.cat(out)


def evaluate_video(model: VideoModel, video: Video, spec: ClipSpec, eval_R: int | None = None,
                   batch_size: int = 64) -> PhaseSequence:
    """Predict every frame using causal clips at interval ``eval_R``."""
    clip = ClipSpec(spec.T, eval_R or spec.R, spec.fps)
    logits = predict_logits(model, video, clip, batch_size)
    return PhaseSequence(video.video_id, logits.argmax(-1).numpy())
