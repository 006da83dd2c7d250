"""Tests for the synergy U-Net."""

import pytest
import torch

from synergyseg.errors import ShapeIncompatible
from synergyseg.network import SynergyUNet
from tests.conftest import make_plan


@pytest.fixture
def three_stage_plan():
    return make_plan(patch_size=(32, 32, 16), channels=(4, 8, 8), pooling=((1, 1, 1), (1, 1, 1)))


def test_stage_shapes_and_logits(three_stage_plan):
    """Test the bottleneck sits at (8, 8, 4) and logits keep the patch shape."""
    torch.manual_seed(0)
    net = SynergyUNet(three_stage_plan)
    assert three_stage_plan.stage_shapes()[-1] == (8, 8, 4)

    out = net(torch.randn(2, 1, 32, 32, 16))

    assert out.logits.shape == (2, 1, 32, 32, 16)
    assert out.indices.shape == (2, 8, 8, 4)
    assert out.latent.shape == (2, 4, 8, 8, 4)
    assert out.vq_loss.dim() == 0 and out.commit_loss.dim() == 0


def test_anisotropic_pooling_keeps_unpooled_axis():
    """Test a (1, 1, 0) pooling vector leaves z untouched."""
    torch.manual_seed(0)
    plan = make_plan(patch_size=(8, 8, 3), pooling=((1, 1, 0),))
    net = SynergyUNet(plan)
    out = net(torch.randn(1, 1, 8, 8, 3))
    assert out.logits.shape == (1, 1, 8, 8, 3)
    assert out.indices.shape == (1, 4, 4, 3)


def test_identical_batch_items_agree(tiny_plan):
    """Test the network treats batch items independently."""
    torch.manual_seed(1)
    net = SynergyUNet(tiny_plan)
    item = torch.randn(1, 1, 8, 8, 8)
    out = net(torch.cat([item, item], dim=0))
    assert torch.allclose(out.logits[0], out.logits[1], atol=1e-6)


def test_zero_input_is_finite(tiny_plan):
    """Test an all-zero volume yields finite logits."""
    net = SynergyUNet(tiny_plan)
    out = net(torch.zeros(1, 1, 8, 8, 8))
    assert torch.isfinite(out.logits).all()


def test_larger_inputs_than_patch(tiny_plan):
    """Test any extent divisible by the pooling product is accepted."""
    net = SynergyUNet(tiny_plan).eval()
    with torch.no_grad():
        out = net(torch.randn(1, 1, 16, 8, 12))
    assert out.logits.shape == (1, 1, 16, 8, 12)


def test_shape_errors(tiny_plan):
    """Test indivisible extents, wrong channels and mismatched skips."""
    net = SynergyUNet(tiny_plan)
    with pytest.raises(ShapeIncompatible):
        net(torch.randn(1, 1, 8, 8, 7))
    with pytest.raises(ShapeIncompatible):
        net(torch.randn(1, 2, 8, 8, 8))
    with pytest.raises(ShapeIncompatible):
        net(torch.randn(8, 8, 8))

    features = net.encode(torch.randn(1, 1, 8, 8, 8))
    with pytest.raises(ShapeIncompatible):
        net.decode(features[-1], [])
    with pytest.raises(ShapeIncompatible):
        net.decode(features[-1], [torch.randn(1, 4, 6, 6, 6)])


def test_two_channel_input():
    """Test the refiner configuration takes image and prior channels."""
    net = SynergyUNet(make_plan(), in_channels=2)
    out = net(torch.randn(1, 2, 8, 8, 8))
    assert out.logits.shape == (1, 1, 8, 8, 8)
