"""Adapted transformer blocks, whole-model assembly and parameter accounting."""

from __future__ import annotations

from dataclasses import dataclass, field

import torch
from torch import nn

from .adapters import STA, Adapter, Adapter3D, adapter3d_params, adapter_params, sta_params
from .backbone import FrozenBlock, ImportReport, PatchEmbed, import_checkpoint, init_frozen_block, init_vit_weights, temporal_msa
from .core import ClipSpec, ModelConfig, ShapeError, ValidatedConfig, validate_config
from .head import I3DHead

BACKBONE_PREFIXES = ("patch_embed.", "cls_token", "pos_embed", "norm.")
FROZEN_BLOCK_PARTS = ("ln1", "attn", "ln2", "mlp")


class AIMBlock(FrozenBlock):
    """Temporal, spatial and joint adaptation around the frozen block."""

    def __init__(self, dim, num_heads, width, mlp_ratio=4.0, drop_path=0.0):
        super().__init__(dim, num_heads, mlp_ratio, drop_path)
        self.adapter_t = Adapter(dim, width)
        self.adapter_s = Adapter(dim, width)
        self.adapter_mlp = Adapter(dim, width, skip=False)

    def temporal_step(self, x):
        return self.adapter_t(temporal_msa(self.ln1(x), self.attn))

    def forward(self, x):
        dp = self.drop_path
        x = x + dp(self.temporal_step(x))
        x = x + dp(self.adapter_s(self.attn(self.ln1(x))))
        xn = self.ln2(x)
        return x + dp(self.mlp(xn) + self.adapter_mlp(xn))


class STABlock(AIMBlock):
    """AIM block whose temporal adapter is replaced by an STA module."""

    def __init__(self, dim, num_heads, width, windows, mlp_ratio=4.0, drop_path=0.0,
                 alpha=1.0, beta=1.0, beta_trainable=True):
        super().__init__(dim, num_heads, width, mlp_ratio, drop_path)
        del self.adapter_t
        self.sta = STA(dim, width, windows, alpha, beta, beta_trainable)

    def temporal_step(self, x):
        return self.sta(temporal_msa(self.ln1(x), self.attn))


class STAdapterBlock(FrozenBlock):
    """Two 3D-adapters: one on the block input, one after the attention residual."""

    def __init__(self, dim, num_heads, width, kernel=(3, 1, 1), mlp_ratio=4.0, drop_path=0.0):
        super().__init__(dim, num_heads, mlp_ratio, drop_path)
        self.adapter_pre = Adapter3D(dim, width, kernel)
        self.adapter_mid = Adapter3D(dim, width, kernel)

    def forward(self, x):
        dp = self.drop_path
        x = self.adapter_pre(x)
        x = self.adapter_mid(x + dp(self.attn(self.ln1(x))))
        return x + dp(self.mlp(self.ln2(x)))


class DualPathBlock(FrozenBlock):
    """Shared frozen weights, separate adapters for the grid and frame paths.

    Grid (temporal) path: serial adapters on top of the MSA and MLP outputs,
    preceded by an input adapter. Frame (spatial) path: bottleneck adapters on
    the LN side-outputs, in parallel with MSA and MLP.
    """

    def __init__(self, dim, num_heads, width, mlp_ratio=4.0, drop_path=0.0, input_adapter=True):
        super().__init__(dim, num_heads, mlp_ratio, drop_path)
        self.adapter_t_in = Adapter(dim, width) if input_adapter else None
        self.adapter_t_attn = Adapter(dim, width)
        self.adapter_t_mlp = Adapter(dim, width)
        self.adapter_s = Adapter(dim, width, skip=False)
        self.adapter_mlp = Adapter(dim, width, skip=False)

    def forward_temporal(self, x):
        dp = self.drop_path
        if self.adapter_t_in is not None:
            x = self.adapter_t_in(x)
        x = x + dp(self.adapter_t_attn(self.attn(self.ln1(x))))
        return x + dp(self.adapter_t_mlp(self.mlp(self.ln2(x))))

    def forward_spatial(self, x):
        dp = self.drop_path
        xn = self.ln1(x)
        x = x + dp(self.attn(xn) + self.adapter_s(xn))
        xn = self.ln2(x)
        return x + dp(self.mlp(xn) + self.adapter_mlp(xn))

    def forward(self, x):
        return self.forward_spatial(x)


def aim_block(x, block: AIMBlock):
    return block(x)


def st_adapter_block(x, block: STAdapterBlock):
    return block(x)


def sta_block(x, block: STABlock):
    return block(x)


def dual_path_blocks(x_s, x_t_grid, blocks):
    for blk in blocks:
        x_s = blk.forward_spatial(x_s)
        x_t_grid = blk.forward_temporal(x_t_grid)
    return x_s, x_t_grid


class VideoModel(nn.Module):
    def __init__(self, vcfg: ValidatedConfig):
        super().__init__()
        cfg = vcfg.model
        depth, dim, heads = cfg.dims
        self.cfg = cfg
        self.clip = vcfg.clip
        self.scheme = cfg.scheme
        self.patch_embed = PatchEmbed(cfg.image_size, cfg.patch_size, cfg.in_chans, dim)
        n_tokens = self.patch_embed.num_patches + 1
        self.cls_token = nn.Parameter(torch.zeros(1, 1, dim))
        self.pos_embed = nn.Parameter(torch.zeros(1, n_tokens, dim))
        if cfg.temporal_pos_embed:
            self.temporal_embed = nn.Parameter(torch.zeros(vcfg.clip.T, 1, dim))
        else:
            self.temporal_embed = None
        width = cfg.bottleneck_width
        rates = [cfg.drop_path_rate * i / max(depth - 1, 1) for i in range(depth)]
        blocks = []
        for i in range(depth):
            if cfg.scheme == "aim":
                blk = AIMBlock(dim, heads, width, cfg.mlp_ratio, rates[i])
            elif cfg.scheme == "sta":
                blk = STABlock(dim, heads, width, vcfg.windows, cfg.mlp_ratio, rates[i],
                               cfg.router_alpha_init, cfg.router_beta_init, cfg.router_beta_trainable)
            elif cfg.scheme == "st-adapter":
                blk = STAdapterBlock(dim, heads, cfg.st_adapter_width, cfg.conv_kernel, cfg.mlp_ratio, rates[i])
            elif cfg.scheme == "dual-path":
                blk = DualPathBlock(dim, heads, width, cfg.mlp_ratio, rates[i])
            else:
                blk = FrozenBlock(dim, heads, cfg.mlp_ratio, rates[i])
            blocks.append(blk)
        self.blocks = nn.ModuleList(blocks)
        self.norm = nn.LayerNorm(dim, eps=1e-6)
        head_in = 2 * dim if cfg.scheme == "dual-path" else dim
        self.head = I3DHead(head_in, cfg.num_classes, cfg.head_hidden, cfg.head_temporal_kernel)
        self._init_weights()
        self.import_report: ImportReport | None = None

    def _init_weights(self):
        nn.init.trunc_normal_(self.pos_embed, std=0.02)
        nn.init.trunc_normal_(self.cls_token, std=0.02)
        for blk in self.blocks:
            init_frozen_block(blk)
        self.norm.apply(init_vit_weights)

    @property
    def dual_path(self) -> bool:
        return self.scheme == "dual-path"

    def frozen_names(self):
        out = []
        for name, _ in self.named_parameters():
            if name.startswith(BACKBONE_PREFIXES):
                out.append(name)
            elif name.startswith("blocks.") and name.split(".")[2] in FROZEN_BLOCK_PARTS:
                out.append(name)
        return out

    def freeze_backbone(self):
        frozen = set(self.frozen_names())
        for name, p in self.named_parameters():
            if name in frozen:
                p.requires_grad_(False)

    def embed(self, pixels):
        if pixels.ndim != 5:
            raise ShapeError(f"need (B, T, C, H, W) pixels, got {tuple(pixels.shape)}")
        x = self.patch_embed(pixels, self.cls_token, self.pos_embed)
        if self.temporal_embed is not None:
            x = x + self.temporal_embed
        return x

    def tokens(self, pixels, grid=None):
        """Final normalised token features ``(B, T, N, D')`` fed to the head."""
        x = self.embed(pixels)
        if self.dual_path:
            if grid is None:
                raise ShapeError("dual-path model needs a grid frameset")
            g = self.patch_embed(grid.unsqueeze(1), self.cls_token, self.pos_embed)
            x, g = dual_path_blocks(x, g, self.blocks)
            x, g = self.norm(x), self.norm(g)
            return torch.cat([x, g.expand_as(x)], dim=-1)
        for blk in self.blocks:
            x = blk(x)
        return self.norm(x)

    def forward(self, pixels, grid=None):
        return self.head(self.tokens(pixels, grid))


def assemble_model(vcfg, checkpoint: dict | None = None, seed: int = 0, strict: bool = True,
                   clip: ClipSpec | None = None, dtype=torch.float32) -> VideoModel:
    """Build, initialise, optionally load and then freeze a model.

    ``vcfg`` may be a raw ModelConfig when ``clip`` is given.
    """
    if isinstance(vcfg, ModelConfig):
        vcfg = validate_config(vcfg, clip or ClipSpec())
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(seed)
        model = VideoModel(vcfg)
    model.to(dtype)
    if checkpoint is not None:
        model.import_report = import_checkpoint(model, checkpoint, strict=strict)
    model.freeze_backbone()
    return model


# -- parameter accounting ------------------------------------------------------------

@dataclass
class ParameterPartition:
    tunable: dict = field(default_factory=dict)
    frozen: dict = field(default_factory=dict)

    @property
    def tuned_count(self) -> int:
        return sum(self.tunable.values())

    @property
    def frozen_count(self) -> int:
        return sum(self.frozen.values())

    @property
    def all_count(self) -> int:
        return self.tuned_count + self.frozen_count

    @property
    def head_count(self) -> int:
        return sum(v for k, v in self.tunable.items() if k.startswith("head."))

    @property
    def adapter_count(self) -> int:
        """Tunable parameters outside the decoder head."""
        return self.tuned_count - self.head_count

    @property
    def totals(self):
        return self.tuned_count, self.all_count

    def summary(self) -> str:
        """``tuned/all`` in millions, head excluded on both sides."""
        return f"{self.adapter_count / 1e6:.2f}M/{(self.adapter_count + self.frozen_count) / 1e6:.2f}M"

    def rows(self):
        for name, n in self.frozen.items():
            yield name, n, "frozen"
        for name, n in self.tunable.items():
            yield name, n, "tuned"


def partition_parameters(model: VideoModel) -> ParameterPartition:
    frozen_names = set(model.frozen_names())
    part = ParameterPartition()
    for name, p in model.named_parameters():
        if name in frozen_names or not p.requires_grad:
            part.frozen[name] = p.numel()
        else:
            part.tunable[name] = p.numel()
    return part


def closed_form_adapter_count(cfg: ModelConfig, n_windows: int | None = None) -> int:
    """Adapter-only tuned count from the per-unit formulas."""
    depth, dim, _ = cfg.dims
    c = cfg.bottleneck_width
    if cfg.scheme == "aim":
        per_block = 3 * adapter_params(dim, c)
    elif cfg.scheme == "sta":
        n = n_windows if n_windows is not None else len(cfg.sta_k_values)
        per_block = sta_params(dim, c, n) + 2 * adapter_params(dim, c)
    elif cfg.scheme == "st-adapter":
        per_block = 2 * adapter3d_params(dim, cfg.st_adapter_width, cfg.conv_kernel)
    elif cfg.scheme == "dual-path":
        per_block = 5 * adapter_params(dim, c)
    else:
        per_block = 0
    return depth * per_block


def count_model(cfg: ModelConfig, clip: ClipSpec | None = None) -> ParameterPartition:
    """Partition for ``cfg`` without allocating weights (meta device)."""
    vcfg = validate_config(cfg, clip or ClipSpec(T=16, R=4))
    with torch.device("meta"):
        model = VideoModel(vcfg)
    model.freeze_backbone()
    return partition_parameters(model)
