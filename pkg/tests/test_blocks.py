import pytest
import torch

from phaseadapt.adapters import Adapter, Adapter3D, adapter_params
from phaseadapt.backbone import temporal_msa
from phaseadapt.blocks import (
    AIMBlock, DualPathBlock, STABlock, STAdapterBlock, VideoModel, aim_block,
    closed_form_adapter_count, count_model, dual_path_blocks, partition_parameters, st_adapter_block,
    sta_block,
)
from phaseadapt.core import SCHEMES, ClipSpec, ModelConfig, validate_config
from phaseadapt.harness.schedule import TrainConfig
from phaseadapt.harness.train import build_optimizer, train_step

from conftest import perturb_adapters
from oracles import frozen_reference_logits

D, H, C = 16, 4, 4


def x_tokens(T=4, N=5, seed=0):
    return torch.randn(2, T, N, D, generator=torch.Generator().manual_seed(seed), dtype=torch.float64)


def perturbed(block):
    block = block.double()
    perturb_adapters(block, 0.2, seed=3)
    return block


# -- block equations -----------------------------------------------------------------------

def test_aim_block_matches_composition():
    blk = perturbed(AIMBlock(D, H, C))
    x = x_tokens()
    xt = x + blk.adapter_t(temporal_msa(blk.ln1(x), blk.attn))
    xs = xt + blk.adapter_s(blk.attn(blk.ln1(xt)))
    ref = xs + blk.mlp(blk.ln2(xs)) + blk.adapter_mlp.bottleneck(blk.ln2(xs))
    torch.testing.assert_close(aim_block(x, blk), ref)


def test_aim_block_zero_init_adds_tmsa_residual():
    blk = AIMBlock(D, H, C).double()
    x = x_tokens()
    ref = blk.frozen_forward(x + temporal_msa(blk.ln1(x), blk.attn))
    torch.testing.assert_close(blk(x), ref)


def test_aim_block_single_frame_reduces_to_image_block():
    blk = AIMBlock(D, H, C).double()
    x = x_tokens(T=1)
    v = blk.ln1(x) @ blk.attn.qkv.weight[2 * D:].T + blk.attn.qkv.bias[2 * D:]
    torch.testing.assert_close(blk(x), blk.frozen_forward(x + blk.attn.proj(v)))


def test_zero_input_zero_biases_give_zero_output():
    blk = perturbed(AIMBlock(D, H, C))
    with torch.no_grad():
        for name, p in blk.named_parameters():
            if name.endswith("bias"):
                p.zero_()
    assert torch.equal(blk(torch.zeros(1, 2, 5, D, dtype=torch.float64)), torch.zeros(1, 2, 5, D, dtype=torch.float64))


def test_st_adapter_block_matches_composition():
    blk = perturbed(STAdapterBlock(D, H, C, (3, 3, 3)))
    x = x_tokens()
    x1 = blk.adapter_pre(x)
    x2 = blk.adapter_mid(x1 + blk.attn(blk.ln1(x1)))
    torch.testing.assert_close(st_adapter_block(x, blk), x2 + blk.mlp(blk.ln2(x2)))
    fresh = STAdapterBlock(D, H, C).double()
    torch.testing.assert_close(fresh(x), fresh.frozen_forward(x))


def test_st_adapter_block_count():
    blk = STAdapterBlock(768, 12, 384, (3, 1, 1))
    tuned = sum(p.numel() for m in (blk.adapter_pre, blk.adapter_mid) for p in m.parameters())
    assert tuned == 2 * 592_512 == 1_185_024


def test_sta_block_beta_zero_equals_aim_with_shared_weights():
    aim = perturbed(AIMBlock(D, H, C))
    s = STABlock(D, H, C, [2], beta=0.0, beta_trainable=False).double()
    with torch.no_grad():
        for part in ("ln1", "attn", "ln2", "mlp", "adapter_s", "adapter_mlp"):
            getattr(s, part).load_state_dict(getattr(aim, part).state_dict())
        s.sta.spatial.load_state_dict(aim.adapter_t.state_dict())
        perturb_adapters(s.sta.temporal0, 0.5, seed=8)  # must not matter at beta=0
    x = x_tokens()
    torch.testing.assert_close(sta_block(x, s), aim(x), rtol=1e-14, atol=1e-14)


def test_sta_block_zero_init():
    blk = STABlock(D, H, C, [2, 4]).double()
    x = x_tokens()
    torch.testing.assert_close(blk(x), blk.frozen_forward(x + temporal_msa(blk.ln1(x), blk.attn)))


def test_sta_block_count_vit_b():
    blk = STABlock(768, 12, 192, [8])
    tuned = sum(p.numel() for n, p in blk.named_parameters() if n.startswith(("sta.", "adapter_")))
    # spatial + temporal (adapter + 2c->2c mixing) + router + s/mlp adapters
    assert tuned == 295_872 + (295_872 + 147_840) + 2 + 2 * 295_872 == 1_331_330


def test_dual_path_side_form_differs_from_serial():
    blk = perturbed(DualPathBlock(D, H, C))
    x = x_tokens()
    side = blk.forward_spatial(x)
    serial_adapter = Adapter(D, C).double()
    serial_adapter.load_state_dict(blk.adapter_s.state_dict())
    xs = x + serial_adapter(blk.attn(blk.ln1(x)))
    ref_adapter = Adapter(D, C).double()
    ref_adapter.load_state_dict(blk.adapter_mlp.state_dict())
    serial = xs + ref_adapter(blk.mlp(blk.ln2(xs)))
    assert (side - serial).abs().max() > 1e-3


def test_dual_path_paths_match_compositions():
    blk = perturbed(DualPathBlock(D, H, C))
    x = x_tokens()
    xn = blk.ln1(x)
    xs = x + blk.attn(xn) + blk.adapter_s.bottleneck(xn)
    ref_s = xs + blk.mlp(blk.ln2(xs)) + blk.adapter_mlp.bottleneck(blk.ln2(xs))
    g = x[:, :1]
    g1 = blk.adapter_t_in(g)
    g2 = g1 + blk.adapter_t_attn(blk.attn(blk.ln1(g1)))
    ref_t = g2 + blk.adapter_t_mlp(blk.mlp(blk.ln2(g2)))
    s, t = dual_path_blocks(x, g, [blk])
    torch.testing.assert_close(s, ref_s)
    torch.testing.assert_close(t, ref_t)


def test_dual_path_single_cell_grid_matches_spatial_path_at_init():
    blk = DualPathBlock(D, H, C).double()
    frame = x_tokens(T=1)
    torch.testing.assert_close(blk.forward_temporal(frame), blk.forward_spatial(frame))
    torch.testing.assert_close(blk.forward_temporal(frame), blk.frozen_forward(frame))


def test_dual_path_feature_width(make_micro, micro_clip):
    model = make_micro("dual-path")
    pixels = torch.randn(2, micro_clip.T, 3, 32, 32, dtype=torch.float64)
    grid = torch.randn(2, 3, 32, 32, dtype=torch.float64)
    assert model.tokens(pixels, grid).shape[-1] == 2 * model.cfg.dims[1]
    assert model(pixels, grid).shape == (2, 3)


# -- whole models ------------------------------------------------------------------------------

@pytest.mark.parametrize("scheme", SCHEMES)
def test_identity_at_init(scheme, make_micro, micro_clip):
    model = make_micro(scheme)
    g = torch.Generator().manual_seed(0)
    pixels = torch.randn(3, micro_clip.T, 3, 32, 32, generator=g, dtype=torch.float64)
    grid = torch.randn(3, 3, 32, 32, generator=g, dtype=torch.float64)
    model.eval()
    with torch.no_grad():
        got = model(pixels, grid)
        ref = frozen_reference_logits(model, pixels, grid)
    assert (got - ref).abs().max().item() <= 1e-5


@pytest.mark.parametrize("scheme", ["aim", "sta", "st-adapter", "dual-path"])
def test_identity_breaks_after_perturbation(scheme, make_micro, micro_clip):
    model = make_micro(scheme)
    perturb_adapters(model, 0.1)
    pixels = torch.randn(2, micro_clip.T, 3, 32, 32, dtype=torch.float64)
    grid = torch.randn(2, 3, 32, 32, dtype=torch.float64)
    with torch.no_grad():
        assert (model(pixels, grid) - frozen_reference_logits(model, pixels, grid)).abs().max() > 1e-6


def _meta_model(scale, scheme):
    cfg = ModelConfig(scale=scale, scheme=scheme)
    with torch.device("meta"):
        return VideoModel(validate_config(cfg, ClipSpec(T=16, R=4)))


@pytest.mark.parametrize("scale,blocks,adapters", [("ViT-B", 12, 36), ("ViT-L", 24, 72)])
def test_aim_block_and_adapter_counts(scale, blocks, adapters):
    model = _meta_model(scale, "aim")
    assert len(model.blocks) == blocks
    assert sum(isinstance(m, Adapter) for m in model.modules()) == adapters


def test_drop_path_rates_rise_linearly():
    model = _meta_model("ViT-B", "sta")
    rates = [blk.drop_path.p for blk in model.blocks]
    assert rates[0] == 0.0 and rates[-1] == pytest.approx(0.2)
    assert all(b > a for a, b in zip(rates, rates[1:]))


@pytest.mark.parametrize("scheme", SCHEMES)
def test_partition_is_exact(scheme, make_micro):
    model = make_micro(scheme)
    part = partition_parameters(model)
    names = {n for n, _ in model.named_parameters()}
    assert not set(part.tunable) & set(part.frozen)
    assert set(part.tunable) | set(part.frozen) == names
    assert part.all_count == sum(p.numel() for p in model.parameters())
    assert all(not model.get_parameter(n).requires_grad for n in part.frozen)
    assert part.adapter_count == closed_form_adapter_count(model.cfg, len(model.cfg.sta_k_values))


def test_no_adapters_means_head_only(make_micro):
    part = partition_parameters(make_micro("none"))
    assert part.tuned_count == part.head_count > 0
    assert all(n.startswith("head.") for n in part.tunable)


def test_aim_vit_b_accounting():
    part = count_model(ModelConfig(scale="ViT-B", scheme="aim"))
    assert part.adapter_count == 36 * 295_872 == 10_651_392
    assert 85.5e6 < part.frozen_count < 86.0e6
    assert part.summary() == "10.65M/96.45M"


def test_sta_router_scalars_are_tunable(make_micro):
    part = partition_parameters(make_micro("sta", sta_k_values=[2, 1]))
    assert "blocks.0.sta.router.alpha" in part.tunable
    assert {"blocks.3.sta.router.beta0", "blocks.3.sta.router.beta1"} <= set(part.tunable)
    frozen_beta = partition_parameters(make_micro("sta", router_beta_trainable=False, router_beta_init=0.0))
    assert "blocks.0.sta.router.beta0" in frozen_beta.frozen


@pytest.mark.parametrize("scheme", ["aim", "sta", "st-adapter", "dual-path"])
def test_one_step_keeps_frozen_and_reaches_tunable(scheme, make_micro, micro_clip):
    model = make_micro(scheme, dtype=torch.float32)
    before = {n: p.detach().clone() for n, p in model.named_parameters() if not p.requires_grad}
    opt = build_optimizer(model, TrainConfig(epochs=2, warmup_epochs=0, base_lr=1e-3))
    for g in opt.param_groups:
        g["lr"] = 1e-3
    g = torch.Generator().manual_seed(0)
    pixels = torch.randn(4, micro_clip.T, 3, 32, 32, generator=g)
    grid = torch.randn(4, 3, 32, 32, generator=g)
    labels = [0, 1, 2, 1]
    train_step(model, opt, pixels, labels, grid if model.dual_path else None)
    for n, p in model.named_parameters():
        if n in before:
            assert torch.equal(p, before[n]), n
            assert p.grad is None
    # gradients once the up-projections have moved off zero
    opt.zero_grad()
    model(pixels, grid if model.dual_path else None).logsumexp(-1).sum().backward()
    tunable = [p for p in model.parameters() if p.requires_grad]
    nonzero = sum(bool(p.grad is not None and p.grad.abs().sum() > 0) for p in tunable)
    assert nonzero / len(tunable) >= 0.95
    opt_params = {id(p) for group in opt.param_groups for p in group["params"]}
    assert opt_params == {id(p) for p in tunable}


def test_assemble_is_seeded(make_micro):
    a, b, c = make_micro("sta", seed=1), make_micro("sta", seed=1), make_micro("sta", seed=2)
    sa, sb, sc = a.state_dict(), b.state_dict(), c.state_dict()
    assert all(torch.equal(sa[k], sb[k]) for k in sa)
    assert not all(torch.equal(sa[k], sc[k]) for k in sa)


def test_closed_form_counts_match_meta_models():
    for scale in ("ViT-B", "ViT-L"):
        for scheme in ("aim", "st-adapter", "dual-path", "sta"):
            cfg = ModelConfig(scale=scale, scheme=scheme)
            assert count_model(cfg).adapter_count == closed_form_adapter_count(cfg)
    assert closed_form_adapter_count(ModelConfig(scheme="aim")) == 36 * adapter_params(768, 192)
    assert isinstance(_meta_model("ViT-B", "st-adapter").blocks[0].adapter_pre, Adapter3D)
