"""Tunable adaptation units inserted into the frozen blocks.

Every unit zero-initialises its up-projection (weight and bias), so a freshly
built unit contributes nothing and the host block starts as the frozen one.
"""

from __future__ import annotations

import math

import torch
import torch.nn.functional as F
from torch import nn

from .core import ConfigError, ShapeError


def _check_dim(x, dim):
    if x.shape[-1] != dim:
        raise ShapeError(f"expected last dim {dim}, got {tuple(x.shape)}")


class Adapter(nn.Module):
    """Bottleneck ``down -> GELU -> up``.

    With ``skip`` the input is added back (the usual adapter); without it only
    the bottleneck term is returned, for side-branch placements.
    """

    def __init__(self, dim: int, width: int, skip: bool = True):
        super().__init__()
        self.skip = skip
        self.down = nn.Linear(dim, width)
        self.up = nn.Linear(width, dim)
        nn.init.zeros_(self.up.weight)
        nn.init.zeros_(self.up.bias)

    def bottleneck(self, x):
        _check_dim(x, self.down.in_features)
        return self.up(F.gelu(self.down(x)))

    def forward(self, x):
        out = self.bottleneck(x)
        return x + out if self.skip else out


def adapter(x: torch.Tensor, w: Adapter) -> torch.Tensor:
    return w(x)


class Adapter3D(nn.Module):
    """Bottleneck with a depthwise 3D convolution over (T, h, w) in the middle.

    The class token skips the convolution: it is carried through the conv
    stage unchanged and only sees the two projections.
    """

    def __init__(self, dim: int, width: int, kernel=(3, 1, 1), skip: bool = True):
        super().__init__()
        self.skip = skip
        self.down = nn.Linear(dim, width)
        kernel = tuple(int(k) for k in kernel)
        self.conv = nn.Conv3d(width, width, kernel, padding=tuple(k // 2 for k in kernel), groups=width)
        self.up = nn.Linear(width, dim)
        nn.init.zeros_(self.up.weight)
        nn.init.zeros_(self.up.bias)

    def conv_tokens(self, h):
        """Apply the depthwise conv to reduced tokens ``(..., T, N, c)``."""
        if h.ndim < 3:
            raise ShapeError(f"need (..., T, N, c) tokens, got {tuple(h.shape)}")
        *lead, T, N, c = h.shape
        side = math.isqrt(N - 1)
        if side * side != N - 1:
            raise ShapeError(f"{N - 1} patch tokens do not form a square grid")
        cls, patches = h[..., :1, :], h[..., 1:, :]
        grid = patches.reshape(-1, T, side, side, c).permute(0, 4, 1, 2, 3)
        grid = self.conv(grid).permute(0, 2, 3, 4, 1).reshape(*lead, T, N - 1, c)
        return torch.cat([cls, grid], dim=-2)

    def forward(self, x):
        _check_dim(x, self.down.in_features)
        out = self.up(self.conv_tokens(self.down(x)))
        return x + out if self.skip else out


def adapter3d(x: torch.Tensor, w: Adapter3D) -> torch.Tensor:
    return w(x)


def check_window(T: int, w: int) -> None:
    if w < 2 or w % 2:
        raise ConfigError(("window", f"window size {w} must be even and >= 2"))
    if T % w:
        raise ConfigError(("window", f"window size {w} does not divide T={T}"))


def feature_reembed(f: torch.Tensor, window: int, mix: nn.Linear) -> torch.Tensor:
    """Re-embed reduced tokens ``(..., T, N, c)`` across frames.

    Within each window of ``window`` frames, frame i and frame i + window/2
    are concatenated on channels, passed through GELU -> mix -> GELU and
    split back into their own frame slots.
    """
    *lead, T, N, c = f.shape
    check_window(T, window)
    half = window // 2
    g = f.reshape(*lead, T // window, 2, half, N, c)
    pairs = torch.cat([g[..., 0, :, :, :], g[..., 1, :, :, :]], dim=-1)  # (..., k, half, N, 2c)
    pairs = F.gelu(mix(F.gelu(pairs)))
    first, second = pairs.split(c, dim=-1)
    return torch.stack([first, second], dim=-4).reshape(*lead, T, N, c)


class TemporalAdapter(nn.Module):
    def __init__(self, dim: int, width: int, window: int):
        super().__init__()
        self.window = window
        self.down = nn.Linear(dim, width)
        self.mix = nn.Linear(2 * width, 2 * width)
        self.up = nn.Linear(width, dim)
        nn.init.zeros_(self.up.weight)
        nn.init.zeros_(self.up.bias)

    def forward(self, h):
        _check_dim(h, self.down.in_features)
        return self.up(feature_reembed(self.down(h), self.window, self.mix))


class Router(nn.Module):
    def __init__(self, n_temporal: int, alpha: float = 1.0, beta: float = 1.0, beta_trainable: bool = True):
        super().__init__()
        self.n_temporal = n_temporal
        self.alpha = nn.Parameter(torch.tensor(float(alpha)))
        for j in range(n_temporal):
            setattr(self, f"beta{j}", nn.Parameter(torch.tensor(float(beta)), requires_grad=beta_trainable))

    def betas(self):
        return [getattr(self, f"beta{j}") for j in range(self.n_temporal)]


class STA(nn.Module):
    """Parallel spatial and windowed temporal adapters mixed by router scalars.

    ``windows`` lists one window size per temporal branch; branch outputs are
    summed, each scaled by its own beta.
    """

    def __init__(self, dim: int, width: int, windows, alpha: float = 1.0, beta: float = 1.0, beta_trainable: bool = True):
        super().__init__()
        windows = list(windows)
        if not windows:
            raise ConfigError(("sta_k_values", "at least one temporal branch required"))
        self.spatial = Adapter(dim, width, skip=False)
        for j, w in enumerate(windows):
            setattr(self, f"temporal{j}", TemporalAdapter(dim, width, w))
        self.router = Router(len(windows), alpha, beta, beta_trainable)
        self.windows = windows

    def temporal_branches(self):
        return [getattr(self, f"temporal{j}") for j in range(len(self.windows))]

    def forward(self, h):
        out = h + self.router.alpha * self.spatial(h)
        for beta, branch in zip(self.router.betas(), self.temporal_branches()):
            out = out + beta * branch(h)
        return out


def sta(h: torch.Tensor, w: STA) -> torch.Tensor:
    return w(h)


# -- closed-form parameter counts ------------------------------------------------

def adapter_params(dim: int, width: int) -> int:
    return 2 * dim * width + width + dim


def adapter3d_params(dim: int, width: int, kernel=(3, 1, 1)) -> int:
    kt, kh, kw = kernel
    return adapter_params(dim, width) + width * kt * kh * kw + width


def temporal_adapter_params(dim: int, width: int) -> int:
    return adapter_params(dim, width) + (2 * width) ** 2 + 2 * width


def sta_params(dim: int, width: int, n_windows: int = 1) -> int:
    return adapter_params(dim, width) + n_windows * temporal_adapter_params(dim, width) + 1 + n_windows
