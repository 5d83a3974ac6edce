import numpy as np
import pytest
import torch
import torch.nn.functional as F
from hypothesis import given, settings
from hypothesis import strategies as st

from phaseadapt.adapters import (
    STA, Adapter, Adapter3D, TemporalAdapter, adapter, adapter3d, adapter3d_params, adapter_params,
    check_window, feature_reembed, sta, sta_params, temporal_adapter_params,
)
from phaseadapt.core import ConfigError, ShapeError

from conftest import perturb_adapters
from oracles import central_difference_error, loop_depthwise_conv3d, reembed_pairs

D, C, T, K = 8, 4, 4, 4
N = K + 1


def tokens(*shape, seed=0):
    return torch.randn(*shape, generator=torch.Generator().manual_seed(seed), dtype=torch.float64)


def dbl(module, seed=1):
    module = module.double()
    perturb_adapters(module, scale=0.3, seed=seed)
    return module


# -- bottleneck adapter ----------------------------------------------------------------

def test_adapter_identity_at_init():
    a = Adapter(D, C).double()
    x = tokens(T, N, D)
    assert torch.equal(adapter(x, a), x)
    assert torch.equal(Adapter(D, C, skip=False).double()(x), torch.zeros_like(x))


def test_adapter_bias_path_closed_form():
    a = dbl(Adapter(D, C))
    z = torch.zeros(1, D, dtype=torch.float64)
    expected = F.gelu(a.down.bias) @ a.up.weight.T + a.up.bias
    torch.testing.assert_close(a(z)[0], expected)


def test_adapter_parameter_count():
    a = Adapter(768, 192)
    assert sum(p.numel() for p in a.parameters()) == adapter_params(768, 192) == 295_872


def test_adapter_rejects_wrong_width():
    with pytest.raises(ShapeError):
        Adapter(D, C)(torch.zeros(2, D + 1))


def test_spatial_adapter_is_frame_local():
    a = dbl(Adapter(D, C))
    x = tokens(T, N, D)
    y = x.clone()
    y[1] += 1.0
    diff = (a(y) - a(x)).abs().sum(dim=(-2, -1))
    assert diff[1] > 0 and diff[[0, 2, 3]].eq(0).all()


# -- 3D adapter --------------------------------------------------------------------------

def test_adapter3d_identity_at_init():
    a = Adapter3D(D, C).double()
    x = tokens(2, T, N, D)
    assert torch.equal(adapter3d(x, a), x)


def test_adapter3d_delta_kernel_is_linear_bottleneck():
    a = dbl(Adapter3D(D, C, (3, 3, 3)))
    with torch.no_grad():
        a.conv.weight.zero_()
        a.conv.weight[:, :, 1, 1, 1] = 1.0
        a.conv.bias.zero_()
    x = tokens(T, N, D)
    torch.testing.assert_close(a(x), x + a.up(a.down(x)))


@pytest.mark.parametrize("kernel", [(3, 1, 1), (3, 3, 3), (1, 3, 1)])
def test_adapter3d_matches_loop_convolution(kernel):
    Tn = 2
    a = dbl(Adapter3D(D, C, kernel))
    x = tokens(Tn, N, D, seed=4)
    h = a.down(x).detach().numpy()  # (T, N, c)
    grid = h[:, 1:, :].reshape(Tn, 2, 2, C).transpose(3, 0, 1, 2)
    conv = loop_depthwise_conv3d(grid, a.conv.weight.detach().numpy()[:, 0], a.conv.bias.detach().numpy())
    mid = np.concatenate([h[:, :1, :], conv.transpose(1, 2, 3, 0).reshape(Tn, K, C)], axis=1)
    ref = x.numpy() + mid @ a.up.weight.detach().numpy().T + a.up.bias.detach().numpy()
    np.testing.assert_allclose(a(x).detach().numpy(), ref, rtol=1e-6, atol=1e-10)


def test_adapter3d_class_token_skips_convolution():
    a = dbl(Adapter3D(D, C))
    x = tokens(T, N, D)
    y = x.clone()
    y[0, 1:] += 1.0  # patches of frame 0 only
    # the class token of frame 1 would change if the conv touched it
    assert torch.equal(a(y)[1, 0], a(x)[1, 0])
    assert not torch.equal(a(y)[1, 1:], a(x)[1, 1:])


def test_adapter3d_needs_square_grid():
    with pytest.raises(ShapeError):
        Adapter3D(D, C).double()(tokens(T, 4, D))


def test_adapter3d_counts():
    a = Adapter3D(768, 384, (3, 1, 1))
    assert sum(p.numel() for p in a.parameters()) == adapter3d_params(768, 384) == 592_512


# -- feature re-embedding ------------------------------------------------------------------

def coupled_frames(Tn, w, source):
    mix = torch.nn.Linear(2 * C, 2 * C).double()
    perturb_adapters(mix, 0.5, seed=2)
    f = tokens(Tn, N, C)
    g = f.clone()
    g[source] += 1.0
    diff = (feature_reembed(g, w, mix) - feature_reembed(f, w, mix)).abs().sum(dim=(-2, -1))
    return {int(i) for i in torch.nonzero(diff).flatten()}


def test_reembed_pairs_for_T16_w8():
    pairs = reembed_pairs(16, 8)
    assert pairs == [(0, 4), (1, 5), (2, 6), (3, 7), (8, 12), (9, 13), (10, 14), (11, 15)]
    for i, j in pairs:
        assert coupled_frames(16, 8, i) == {i, j}
        assert coupled_frames(16, 8, j) == {i, j}


@settings(max_examples=25, deadline=None)
@given(k=st.integers(1, 4), half=st.integers(1, 3))
def test_reembed_coupling_matches_enumeration(k, half):
    w = 2 * half
    Tn = k * w
    partner = {}
    for i, j in reembed_pairs(Tn, w):
        partner[i], partner[j] = j, i
    assert sorted(partner) == list(range(Tn))  # every frame covered exactly once
    for frame in range(Tn):
        assert coupled_frames(Tn, w, frame) == {frame, partner[frame]}


def test_reembed_identity_mixing():
    mix = torch.nn.Linear(2 * C, 2 * C).double()
    with torch.no_grad():
        mix.weight.copy_(torch.eye(2 * C))
        mix.bias.zero_()
    f = tokens(8, N, C)
    torch.testing.assert_close(feature_reembed(f, 4, mix), F.gelu(F.gelu(f)), rtol=0, atol=0)


def test_reembed_two_frames_couple():
    assert coupled_frames(2, 2, 0) == {0, 1}


def test_window_checks():
    for Tn, w in [(8, 3), (8, 6), (8, 0)]:
        with pytest.raises(ConfigError):
            check_window(Tn, w)
    check_window(8, 2)
    with pytest.raises(ConfigError):
        feature_reembed(tokens(6, N, C), 4, torch.nn.Linear(2 * C, 2 * C).double())


def test_temporal_adapter_count():
    t = TemporalAdapter(768, 192, 8)
    assert sum(p.numel() for p in t.parameters()) == temporal_adapter_params(768, 192) == 295_872 + 147_840


# -- STA ------------------------------------------------------------------------------------

def test_sta_identity_at_init():
    s = STA(D, C, [2]).double()
    h = tokens(2, T, N, D)
    assert torch.equal(sta(h, s), h)


def test_sta_beta_zero_is_spatial_only():
    s = dbl(STA(D, C, [2, 4]))
    with torch.no_grad():
        for b in s.router.betas():
            b.zero_()
    h = tokens(T, N, D)
    torch.testing.assert_close(s(h), h + s.router.alpha * s.spatial(h), rtol=0, atol=0)


def test_sta_alpha_gradient_equals_spatial_output_sum():
    s = dbl(STA(D, C, [2]))
    h = tokens(T, N, D)
    s(h).sum().backward()
    expected = s.spatial(h).sum().item()
    assert s.router.alpha.grad.item() == pytest.approx(expected, rel=1e-12)
    eps = 1e-5
    with torch.no_grad():
        s.router.alpha += eps
        up = s(h).sum().item()
        s.router.alpha -= 2 * eps
        down = s(h).sum().item()
    assert (up - down) / (2 * eps) == pytest.approx(expected, rel=1e-4)


def test_sta_multi_branch_is_sum():
    s = dbl(STA(D, C, [2, 4]))
    h = tokens(T, N, D)
    t0, t1 = s.temporal_branches()
    b0, b1 = s.router.betas()
    expected = h + s.router.alpha * s.spatial(h) + b0 * t0(h) + b1 * t1(h)
    torch.testing.assert_close(s(h), expected)


def test_sta_frozen_beta():
    s = STA(D, C, [2], beta=0.0, beta_trainable=False)
    assert not s.router.beta0.requires_grad and s.router.alpha.requires_grad
    assert s.router.beta0.item() == 0.0


def test_sta_counts():
    s = STA(768, 192, [8])
    assert sum(p.numel() for p in s.parameters()) == sta_params(768, 192, 1) == 295_872 + 443_712 + 2
    s2 = STA(768, 192, [8, 2])
    assert sum(p.numel() for p in s2.parameters()) == sta_params(768, 192, 2)


# -- finite-difference gradients (double precision, D=8, c=4, T=4, K=4) ------------------------

def _check(module, x):
    x = x.clone().requires_grad_(True)
    tensors = [x] + [p for p in module.parameters() if p.requires_grad]
    return central_difference_error(lambda: module(x), tensors)


def test_gradcheck_adapter():
    assert _check(dbl(Adapter(D, C)), tokens(T, N, D)) < 1e-4


def test_gradcheck_adapter3d():
    assert _check(dbl(Adapter3D(D, C, (3, 3, 3))), tokens(T, N, D)) < 1e-4


@pytest.mark.parametrize("w", [2, 4])
def test_gradcheck_feature_reembed(w):
    mix = torch.nn.Linear(2 * C, 2 * C).double()
    perturb_adapters(mix, 0.3, seed=5)
    f = tokens(T, N, C).requires_grad_(True)
    err = central_difference_error(lambda: feature_reembed(f, w, mix), [f, mix.weight, mix.bias])
    assert err < 1e-4


def test_gradcheck_sta_and_router():
    s = dbl(STA(D, C, [2, 4]))
    assert _check(s, tokens(T, N, D)) < 1e-4
    h = tokens(T, N, D)
    router = [s.router.alpha] + s.router.betas()
    assert central_difference_error(lambda: s(h), router) < 1e-4
