import sys

import numpy as np
import pytest
import torch

from phaseadapt.blocks import assemble_model
from phaseadapt.core import ClipSpec, ModelConfig

torch.set_num_threads(1)


def micro_config(scheme="sta", **kw):
    base = dict(scale="micro", scheme=scheme, image_size=32, patch_size=8, num_classes=3,
                drop_path_rate=0.0, head_hidden=16, sta_k_values=[2], st_adapter_width=16,
                grid_side=2, grid_interval=1)
    base.update(kw)
    return ModelConfig(**base)


def perturb_adapters(model, scale=0.05, seed=0):
    """Move every tunable parameter off its initial value."""
    g = torch.Generator().manual_seed(seed)
    with torch.no_grad():
        for _, p in model.named_parameters():
            if p.requires_grad:
                p.add_(scale * torch.randn(p.shape, generator=g, dtype=p.dtype))


@pytest.fixture
def micro_clip():
    return ClipSpec(T=4, R=1)


@pytest.fixture
def make_micro():
    def _make(scheme="sta", clip=ClipSpec(T=4, R=1), dtype=torch.float64, seed=0, **kw):
        return assemble_model(micro_config(scheme, **kw), clip=clip, seed=seed, dtype=dtype)

    return _make


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
