"""Frozen ViT primitives and checkpoint import.

Token tensors are laid out ``(..., T, N, D)`` with ``N = K + 1`` and the class
token at index 0 of the N axis. Spatial attention mixes along N within each
frame; temporal attention reuses the same weights and mixes along T within
each token position.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .core import DimensionError, ShapeError


class Attention(nn.Module):
    def __init__(self, dim: int, num_heads: int):
        super().__init__()
        if dim % num_heads:
            raise ShapeError(f"dim {dim} not divisible by {num_heads} heads")
        self.num_heads = num_heads
        self.qkv = nn.Linear(dim, 3 * dim)
        self.proj = nn.Linear(dim, dim)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        """Self-attention over the second-to-last axis."""
        if x.shape[-1] != self.qkv.in_features:
            raise ShapeError(f"expected last dim {self.qkv.in_features}, got {tuple(x.shape)}")
        *lead, L, D = x.shape
        h = self.num_heads
        qkv = self.qkv(x).reshape(*lead, L, 3, h, D // h).movedim(-3, 0)
        q, k, v = qkv.unbind(0)  # (..., L, h, d)
        q, k, v = (t.transpose(-3, -2) for t in (q, k, v))  # (..., h, L, d)
        attn = (q @ k.transpose(-2, -1)) * (D // h) ** -0.5
        out = attn.softmax(dim=-1) @ v
        return self.proj(out.transpose(-3, -2).reshape(*lead, L, D))


class Mlp(nn.Module):
    def __init__(self, dim: int, hidden: int):
        super().__init__()
        self.fc1 = nn.Linear(dim, hidden)
        self.fc2 = nn.Linear(hidden, dim)

    def forward(self, x):
        if x.shape[-1] != self.fc1.in_features:
            raise ShapeError(f"expected last dim {self.fc1.in_features}, got {tuple(x.shape)}")
        return self.fc2(F.gelu(self.fc1(x)))


class PatchEmbed(nn.Module):
    """Per-frame 1xPxP patches -> tokens, plus class token and position embedding."""

    def __init__(self, image_size: int, patch_size: int, in_chans: int, dim: int):
        super().__init__()
        self.patch_size = patch_size
        self.num_patches = (image_size // patch_size) ** 2
        self.proj = nn.Conv2d(in_chans, dim, patch_size, stride=patch_size)

    def forward(self, pixels: torch.Tensor, cls_token, pos_embed) -> torch.Tensor:
        *lead, C, H, W = pixels.shape
        P = self.patch_size
        if H % P or W % P:
            raise DimensionError(f"frame {H}x{W} not divisible by patch size {P}")
        x = self.proj(pixels.reshape(-1, C, H, W))  # (n, D, h, w)
        x = x.flatten(2).transpose(1, 2)
        cls = cls_token.reshape(1, 1, -1).expand(x.shape[0], 1, -1)
        x = torch.cat([cls, x], dim=1)
        if pos_embed.shape[-2] != x.shape[1]:
            raise DimensionError(f"position embedding has {pos_embed.shape[-2]} slots for {x.shape[1]} tokens")
        x = x + pos_embed.reshape(1, x.shape[1], -1)
        return x.reshape(*lead, x.shape[1], x.shape[2])


class DropPath(nn.Module):
    """Per-sample stochastic depth on a residual branch."""

    def __init__(self, p: float = 0.0):
        super().__init__()
        self.p = p

    def forward(self, x):
        if self.p == 0.0 or not self.training:
            return x
        keep = 1.0 - self.p
        shape = (x.shape[0],) + (1,) * (x.ndim - 1)
        mask = x.new_empty(shape).bernoulli_(keep)
        return x * mask / keep


class FrozenBlock(nn.Module):
    """The pre-trained part of one transformer block."""

    def __init__(self, dim: int, num_heads: int, mlp_ratio: float = 4.0, drop_path: float = 0.0):
        super().__init__()
        self.ln1 = nn.LayerNorm(dim, eps=1e-6)
        self.attn = Attention(dim, num_heads)
        self.ln2 = nn.LayerNorm(dim, eps=1e-6)
        self.mlp = Mlp(dim, int(dim * mlp_ratio))
        self.drop_path = DropPath(drop_path)

    def frozen_forward(self, x):
        x = x + self.attn(self.ln1(x))
        return x + self.mlp(self.ln2(x))

    def forward(self, x):
        x = x + self.drop_path(self.attn(self.ln1(x)))
        return x + self.drop_path(self.mlp(self.ln2(x)))


def patch_embed(pixels, embed: PatchEmbed, cls_token, pos_embed):
    return embed(pixels, cls_token, pos_embed)


def spatial_msa(x: torch.Tensor, attn: Attention) -> torch.Tensor:
    return attn(x)


def temporal_msa(x: torch.Tensor, attn: Attention) -> torch.Tensor:
    if x.ndim < 3:
        raise ShapeError(f"need (..., T, N, D) tokens, got {tuple(x.shape)}")
    return attn(x.transpose(-3, -2)).transpose(-3, -2)


def mlp(x: torch.Tensor, m: Mlp) -> torch.Tensor:
    return m(x)


def init_vit_weights(module: nn.Module) -> None:
    if isinstance(module, nn.Linear):
        nn.init.trunc_normal_(module.weight, std=0.02)
        if module.bias is not None:
            nn.init.zeros_(module.bias)
    elif isinstance(module, nn.LayerNorm):
        nn.init.ones_(module.weight)
        nn.init.zeros_(module.bias)


def init_frozen_block(block: FrozenBlock) -> None:
    """Random stand-in for pre-trained block weights.

    Residual branches start small (std 0.02) so the stream stays close to the
    embedding, while qkv gets Xavier-uniform so attention logits are O(1) and
    attention stays content dependent; with std 0.02 everywhere it is nearly
    uniform and temporal attention erases frame order.
    """
    for part in (block.ln1, block.attn, block.ln2, block.mlp):
        part.apply(init_vit_weights)
    nn.init.xavier_uniform_(block.attn.qkv.weight)


# -- checkpoint import -------------------------------------------------------------

class CheckpointError(KeyError):
    def __init__(self, message, missing=(), unexpected=()):
        super().__init__(message)
        self.missing = list(missing)
        self.unexpected = list(unexpected)


@dataclass
class ImportReport:
    loaded: list = field(default_factory=list)
    missing: list = field(default_factory=list)  # model names with no source weight
    unexpected: list = field(default_factory=list)  # source names we could not place

    def lines(self):
        out = [f"loaded={len(self.loaded)}", f"missing={len(self.missing)}", f"unexpected={len(self.unexpected)}"]
        out += [f"missing: {n}" for n in self.missing]
        out += [f"unexpected: {n}" for n in self.unexpected]
        return out


_BLOCK_RENAMES = [
    # timm / DeiT style
    (r"^blocks\.(\d+)\.norm1\.", r"blocks.\1.ln1."),
    (r"^blocks\.(\d+)\.norm2\.", r"blocks.\1.ln2."),
    # OpenAI CLIP visual tower
    (r"^(?:visual\.)?transformer\.resblocks\.(\d+)\.ln_1\.", r"blocks.\1.ln1."),
    (r"^(?:visual\.)?transformer\.resblocks\.(\d+)\.ln_2\.", r"blocks.\1.ln2."),
    (r"^(?:visual\.)?transformer\.resblocks\.(\d+)\.attn\.in_proj_weight$", r"blocks.\1.attn.qkv.weight"),
    (r"^(?:visual\.)?transformer\.resblocks\.(\d+)\.attn\.in_proj_bias$", r"blocks.\1.attn.qkv.bias"),
    (r"^(?:visual\.)?transformer\.resblocks\.(\d+)\.attn\.out_proj\.", r"blocks.\1.attn.proj."),
    (r"^(?:visual\.)?transformer\.resblocks\.(\d+)\.mlp\.c_fc\.", r"blocks.\1.mlp.fc1."),
    (r"^(?:visual\.)?transformer\.resblocks\.(\d+)\.mlp\.c_proj\.", r"blocks.\1.mlp.fc2."),
    (r"^(?:visual\.)?conv1\.", "patch_embed.proj."),
    (r"^(?:visual\.)?class_embedding$", "cls_token"),
    (r"^(?:visual\.)?positional_embedding$", "pos_embed"),
    (r"^(?:visual\.)?ln_post\.", "norm."),
    (r"^fc_norm\.", "norm."),
]


def canonical_name(name: str) -> str:
    for pattern, repl in _BLOCK_RENAMES:
        new = re.sub(pattern, repl, name)
        if new != name:
            return new
    return name


def import_checkpoint(model: nn.Module, state: dict, strict: bool = True) -> ImportReport:
    """Copy frozen backbone weights from a flat name->array map into ``model``.

    Only parameters ``model`` marks as frozen are candidates; adapter and head
    weights keep their fresh initialisation. With ``strict`` any frozen
    parameter left without a source raises CheckpointError.
    """
    params = dict(model.named_parameters())
    frozen = set(model.frozen_names())
    report = ImportReport()
    placed = set()
    for src_name, value in state.items():
        name = canonical_name(src_name)
        if name not in frozen:
            report.unexpected.append(src_name)
            continue
        target = params[name]
        arr = torch.as_tensor(np.asarray(value)) if not torch.is_tensor(value) else value
        if arr.numel() == target.numel() and arr.shape != target.shape:
            arr = arr.reshape(target.shape)
        if arr.shape != target.shape:
            raise CheckpointError(f"{src_name}: shape {tuple(arr.shape)} != {tuple(target.shape)}")
        with torch.no_grad():
            target.copy_(arr.to(target.dtype))
        placed.add(name)
        report.loaded.append(name)
    report.missing = sorted(frozen - placed)
    if strict and report.missing:
        raise CheckpointError(
            f"{len(report.missing)} frozen weights missing from checkpoint: {report.missing[:5]}...",
            report.missing,
            report.unexpected,
        )
    return report
