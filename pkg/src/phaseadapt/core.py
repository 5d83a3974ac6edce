"""Domain types, configuration schema and seeding shared by every module."""

from __future__ import annotations

import dataclasses
import hashlib
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
import torch

# "none" is the frozen backbone plus head, with no adapters
SCHEMES = ("aim", "st-adapter", "dual-path", "sta", "none")

# name -> (depth, embed_dim, num_heads)
SCALES = {
    "ViT-B": (12, 768, 12),
    "ViT-L": (24, 1024, 16),
    "micro": (4, 64, 4),
}


class ConfigError(ValueError):
    """One or more configuration invariants are violated.

    ``errors`` holds ``(field, reason)`` pairs, one per violation.
    """

    def __init__(self, errors):
        if isinstance(errors, tuple) and len(errors) == 2 and isinstance(errors[0], str):
            errors = [errors]
        self.errors = list(errors)
        super().__init__("; ".join(f"{f}: {r}" for f, r in self.errors))


class DimensionError(ValueError):
    pass


class ShapeError(ValueError):
    pass


@dataclass(frozen=True)
class ClipSpec:
    T: int = 8
    R: int = 4
    fps: float = 1.0

    def errors(self):
        out = []
        if not isinstance(self.T, int) or self.T < 1:
            out.append(("T", f"must be an integer >= 1, got {self.T!r}"))
        if not isinstance(self.R, int) or self.R < 1:
            out.append(("R", f"must be an integer >= 1, got {self.R!r}"))
        if not (isinstance(self.fps, (int, float)) and self.fps > 0):
            out.append(("fps", f"must be > 0, got {self.fps!r}"))
        return out


@dataclass(frozen=True)
class TokenShape:
    T: int
    K: int
    D: int

    @classmethod
    def from_image(cls, T: int, image_size: int, patch_size: int, D: int) -> "TokenShape":
        if image_size % patch_size:
            raise DimensionError(f"image size {image_size} not divisible by patch size {patch_size}")
        return cls(T, (image_size // patch_size) ** 2, D)


@dataclass
class ModelConfig:
    scale: str = "ViT-B"
    scheme: str = "aim"
    bottleneck_ratio: float = 0.25
    sta_k_values: list = field(default_factory=lambda: [2])
    conv_kernel: tuple = (3, 1, 1)
    num_classes: int = 7
    drop_path_rate: float = 0.2
    image_size: int = 224
    patch_size: int = 16
    in_chans: int = 3
    mlp_ratio: float = 4.0
    # absolute width; 384 matches the published counts at both ViT-B and ViT-L
    st_adapter_width: int = 384
    temporal_pos_embed: bool = False
    router_alpha_init: float = 1.0
    router_beta_init: float = 1.0
    router_beta_trainable: bool = True
    head_hidden: int = 0  # 0 -> embed_dim
    head_temporal_kernel: int = 3
    grid_side: int = 4
    grid_interval: int = 2
    depth: int = 0  # 0 -> scale preset
    embed_dim: int = 0
    num_heads: int = 0

    @property
    def dims(self) -> tuple:
        depth, dim, heads = SCALES.get(self.scale, (0, 0, 0))
        return (self.depth or depth, self.embed_dim or dim, self.num_heads or heads)

    @property
    def bottleneck_width(self) -> int:
        return int(round(self.bottleneck_ratio * self.dims[1]))

    @property
    def num_patches(self) -> int:
        return (self.image_size // self.patch_size) ** 2

    @property
    def grid_frames(self) -> int:
        return self.grid_side * self.grid_side


@dataclass(frozen=True)
class ValidatedConfig:
    model: ModelConfig
    clip: ClipSpec
    windows: tuple  # window size w per entry of sta_k_values

    @property
    def token_shape(self) -> TokenShape:
        return TokenShape(self.clip.T, self.model.num_patches, self.model.dims[1])


def validate_config(cfg: ModelConfig, clip: ClipSpec) -> ValidatedConfig:
    """Check every invariant of ``cfg`` against ``clip``.

    Raises a single ConfigError carrying all violations. Never raises anything
    else, whatever garbage the fields hold.
    """
    errs = []
    try:
        errs.extend(clip.errors())
    except Exception as exc:  # pragma: no cover - defensive
        errs.append(("clip", repr(exc)))
    try:
        errs.extend(_model_errors(cfg, clip))
    except Exception as exc:
        errs.append(("config", f"unreadable field value ({exc!r})"))
    if errs:
        raise ConfigError(errs)
    windows = tuple(clip.T // k for k in cfg.sta_k_values) if cfg.scheme == "sta" else ()
    cfg = dataclasses.replace(cfg, sta_k_values=list(cfg.sta_k_values), conv_kernel=tuple(cfg.conv_kernel))
    return ValidatedConfig(cfg, clip, windows)


def _model_errors(cfg: ModelConfig, clip: ClipSpec):
    errs = []
    if cfg.scale not in SCALES:
        errs.append(("scale", f"unknown scale {cfg.scale!r}; expected one of {sorted(SCALES)}"))
    if cfg.scheme not in SCHEMES:
        errs.append(("scheme", f"unknown scheme {cfg.scheme!r}; expected one of {SCHEMES}"))
    if not (isinstance(cfg.bottleneck_ratio, (int, float)) and 0 < cfg.bottleneck_ratio <= 1):
        errs.append(("bottleneck_ratio", "must lie in (0, 1]"))
    depth, dim, heads = cfg.dims
    if min(depth, dim, heads) < 1:
        errs.append(("depth", "depth, embed_dim and num_heads must be positive"))
    elif dim % heads:
        errs.append(("num_heads", f"embed_dim {dim} not divisible by {heads} heads"))
    if cfg.patch_size < 1 or cfg.image_size < 1 or cfg.image_size % cfg.patch_size:
        errs.append(("image_size", f"{cfg.image_size} not divisible by patch size {cfg.patch_size}"))
    if not isinstance(cfg.num_classes, int) or cfg.num_classes < 1:
        errs.append(("num_classes", "must be a positive integer"))
    if not (0 <= cfg.drop_path_rate < 1):
        errs.append(("drop_path_rate", "must lie in [0, 1)"))
    kernel = tuple(cfg.conv_kernel)
    if len(kernel) != 3 or any(int(k) != k or k < 1 or k % 2 == 0 for k in kernel):
        errs.append(("conv_kernel", f"need three odd positive sizes, got {kernel}"))
    elif math.isqrt(cfg.num_patches) ** 2 != cfg.num_patches:
        errs.append(("image_size", "patch grid must be square"))
    if cfg.head_hidden < 0:
        errs.append(("head_hidden", "must be >= 0"))
    if cfg.scheme == "st-adapter" and cfg.st_adapter_width < 1:
        errs.append(("st_adapter_width", "must be positive"))
    if cfg.scheme == "dual-path":
        if cfg.grid_side < 1 or cfg.image_size % cfg.grid_side:
            errs.append(("grid_side", f"image size must be divisible by grid side {cfg.grid_side}"))
        if cfg.grid_interval < 1:
            errs.append(("grid_interval", "must be >= 1"))
    if cfg.head_temporal_kernel < 1 or cfg.head_temporal_kernel % 2 == 0:
        errs.append(("head_temporal_kernel", "must be odd and positive"))
    if cfg.scheme == "sta":
        ks = list(cfg.sta_k_values)
        if not ks:
            errs.append(("sta_k_values", "at least one window count required"))
        T = clip.T if isinstance(clip.T, int) and clip.T > 0 else None
        for k in ks:
            if not isinstance(k, int) or k < 1:
                errs.append(("sta_k_values", f"k={k!r} must be a positive integer"))
            elif T is not None and T % k:
                errs.append(("sta_k_values", f"k={k} does not divide T={T}"))
            elif T is not None and (T // k) % 2:
                errs.append(("sta_k_values", f"window w=T/k={T // k} must be even"))
    return errs


# -- flat key=value config files ------------------------------------------------

def _parse_value(name: str, raw: str, default):
    raw = raw.strip()
    if isinstance(default, bool):
        if raw.lower() in ("1", "true", "yes", "on"):
            return True
        if raw.lower() in ("0", "false", "no", "off"):
            return False
        raise ConfigError((name, f"not a boolean: {raw!r}"))
    if isinstance(default, (list, tuple)):
        items = [p for p in raw.replace("/", ",").split(",") if p.strip()]
        try:
            vals = [int(p) for p in items]
        except ValueError:
            raise ConfigError((name, f"expected comma-separated integers, got {raw!r}")) from None
        return tuple(vals) if isinstance(default, tuple) else vals
    try:
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
    except ValueError:
        raise ConfigError((name, f"cannot parse {raw!r}")) from None
    return raw


def parse_config_text(text: str, base: ModelConfig | None = None) -> ModelConfig:
    base = base or ModelConfig()
    fields = {f.name: getattr(base, f.name) for f in dataclasses.fields(ModelConfig)}
    updates, errs = {}, []
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            errs.append((f"line {lineno}", "expected key=value"))
            continue
        key, raw = (s.strip() for s in line.split("=", 1))
        if key not in fields:
            errs.append((key, "unknown key"))
            continue
        try:
            updates[key] = _parse_value(key, raw, fields[key])
        except ConfigError as exc:
            errs.extend(exc.errors)
    if errs:
        raise ConfigError(errs)
    return dataclasses.replace(base, **updates)


def load_config(path) -> ModelConfig:
    return parse_config_text(Path(path).read_text(encoding="utf-8"))


def dump_config(cfg: ModelConfig) -> str:
    lines = []
    for f in dataclasses.fields(cfg):
        v = getattr(cfg, f.name)
        if isinstance(v, (list, tuple)):
            v = ",".join(str(x) for x in v)
        lines.append(f"{f.name}={v}")
    return "\n".join(lines) + "\n"


# -- seeding ---------------------------------------------------------------------

class RngState:
    """Paired numpy / torch generators derived from one integer seed.

    ``fork`` derives an independent child stream; the same fork sequence from
    the same seed always gives the same children.
    """

    def __init__(self, seed: int):
        self.seed = int(seed)
        self._seq = np.random.SeedSequence(self.seed)
        self.numpy = np.random.default_rng(self._seq)
        self.torch = torch.Generator().manual_seed(self.seed)

    def fork(self) -> "RngState":
        child_seed = int(self._seq.spawn(1)[0].generate_state(1, dtype=np.uint32)[0])
        return RngState(child_seed)

    def torch_seed(self) -> int:
        return int(self.numpy.integers(0, 2**31 - 1))


def seeded_rng(seed: int) -> RngState:
    return RngState(seed)


def state_checksum(tensors) -> str:
    """SHA-256 over a name->tensor mapping in sorted-name order."""
    h = hashlib.sha256()
    for name in sorted(tensors):
        t = tensors[name]
        h.update(name.encode())
        h.update(t.detach().cpu().contiguous().numpy().tobytes())
    return h.hexdigest()


def as_int_list(text: str | Sequence[int]) -> list:
    if isinstance(text, str):
        return [int(p) for p in text.replace("/", ",").split(",") if p.strip()]
    return [int(p) for p in text]
