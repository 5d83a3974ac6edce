"""Checkpoints (flat name -> array maps) and run manifests."""

from __future__ import annotations

from pathlib import Path

import numpy as np
import torch

from ..core import ClipSpec, dump_config, parse_config_text


def load_state_map(path) -> dict:
    """Read a flat name->array map from ``.npz`` or a torch file."""
    path = Path(path)
    if path.suffix == ".npz":
        with np.load(path) as data:
            return {k: torch.as_tensor(data[k]) for k in data.files}
    obj = torch.load(path, map_location="cpu", weights_only=False)
    if isinstance(obj, dict) and "model" in obj and isinstance(obj["model"], dict):
        obj = obj["model"]
    elif isinstance(obj, dict) and "state_dict" in obj:
        obj = obj["state_dict"]
    return dict(obj)


def save_checkpoint(path, model, optimizer=None, step: int = 0, extra: dict | None = None) -> None:
    payload = {
        "model": {k: v.detach().cpu() for k, v in model.state_dict().items()},
        "config": dump_config(model.cfg),
        "clip": {"T": model.clip.T, "R": model.clip.R, "fps": model.clip.fps},
        "step": step,
    }
    if optimizer is not None:
        payload["optimizer"] = optimizer.state_dict()
    if extra:
        payload.update(extra)
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    torch.save(payload, path)


def load_checkpoint(path):
    """Rebuild the model saved by :func:`save_checkpoint`; returns (model, payload)."""
    from ..blocks import assemble_model

    payload = torch.load(path, map_location="cpu", weights_only=False)
    cfg = parse_config_text(payload["config"])
    clip = ClipSpec(**payload["clip"])
    state = payload["model"]
    dtype = next(iter(state.values())).dtype
    model = assemble_model(cfg, clip=clip, dtype=dtype)
    model.load_state_dict(state)
    return model, payload


def write_manifest(path, values: dict) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_text("".join(f"{k}={v}\n" for k, v in values.items()))


def read_manifest(path) -> dict:
    out = {}
    for line in Path(path).read_text().splitlines():
        if "=" in line:
            k, v = line.split("=", 1)
            out[k.strip()] = v.strip()
    return out
