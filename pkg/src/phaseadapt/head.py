"""Temporal conv decoder: token stack -> one logit vector per clip."""

from __future__ import annotations

import math

import torch
import torch.nn.functional as F
from torch import nn

from .core import ShapeError


class I3DHead(nn.Module):
    """Two temporal 3D convolutions, global average pooling, linear classifier.

    A stand-in for a full I3D decoder. Convolutions span ``temporal_kernel``
    frames and a single spatial position; the class token is dropped before
    the tokens are folded back onto the patch grid.
    """

    def __init__(self, in_dim: int, num_classes: int, hidden: int = 0, temporal_kernel: int = 3):
        super().__init__()
        hidden = hidden or in_dim
        k = (temporal_kernel, 1, 1)
        pad = (temporal_kernel // 2, 0, 0)
        self.conv1 = nn.Conv3d(in_dim, hidden, k, padding=pad)
        self.conv2 = nn.Conv3d(hidden, hidden, k, padding=pad)
        self.fc = nn.Linear(hidden, num_classes)

    def features(self, x: torch.Tensor) -> torch.Tensor:
        if x.ndim != 4:
            raise ShapeError(f"need (B, T, N, D) tokens, got {tuple(x.shape)}")
        B, T, N, D = x.shape
        if D != self.conv1.in_channels:
            raise ShapeError(f"head expects width {self.conv1.in_channels}, got {D}")
        side = math.isqrt(N - 1)
        if side * side != N - 1:
            raise ShapeError(f"{N - 1} patch tokens do not form a square grid")
        g = x[:, :, 1:, :].reshape(B, T, side, side, D).permute(0, 4, 1, 2, 3)
        g = F.gelu(self.conv2(F.gelu(self.conv1(g))))
        return g.mean(dim=(2, 3, 4))

    def forward(self, x):
        return self.fc(self.features(x))


def decode(x: torch.Tensor, head: I3DHead) -> torch.Tensor:
    squeeze = x.ndim == 3
    out = head(x.unsqueeze(0) if squeeze else x)
    return out[0] if squeeze else out
