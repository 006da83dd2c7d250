"""Finite-difference check of the end-to-end gradient."""

import torch
import torch.nn.functional as F
from torch import nn

from synergyseg.models import LossWeights
from synergyseg.network import Quantized, SynergyUNet
from synergyseg.services.training import objective

STEP = 1e-6
TOLERANCE = 1e-2
FLOOR = 1e-6


class FrozenCodes(nn.Module):
    """Differentiable stand-in for the quantizer: identity path, losses against fixed codes."""

    def __init__(self, codes: torch.Tensor):
        super().__init__()
        self.register_buffer("codes", codes)

    def forward(self, z: torch.Tensor) -> Quantized:
        return Quantized(
            zq=z,
            indices=torch.zeros(z.shape[0], *z.shape[2:], dtype=torch.long),
            vq_loss=F.mse_loss(self.codes, z),
            commit_loss=F.mse_loss(z, self.codes),
            perplexity=torch.ones((), dtype=torch.float64),
        )


def test_backprop_matches_central_differences(tiny_plan):
    """Test 20 sampled parameter gradients against central differences in double precision."""
    torch.manual_seed(0)
    net = SynergyUNet(tiny_plan).double()
    x = torch.randn(1, 1, 8, 8, 8, dtype=torch.float64)
    target = (torch.rand(1, 1, 8, 8, 8, dtype=torch.float64) > 0.6).double()

    latent_shape = (1, tiny_plan.latent_dim, 4, 4, 4)
    net.bottleneck.quantizer = FrozenCodes(torch.randn(latent_shape, dtype=torch.float64))
    weights = LossWeights()

    def loss() -> torch.Tensor:
        total, _ = objective(net(x), target, weights)
        return total

    loss().backward()
    params = [p for p in net.parameters() if p.requires_grad]
    sizes = torch.tensor([p.numel() for p in params])
    generator = torch.Generator().manual_seed(1)
    flat_picks = torch.randint(0, int(sizes.sum()), (20,), generator=generator)
    offsets = torch.cumsum(sizes, 0)

    for pick in flat_picks.tolist():
        which = int(torch.searchsorted(offsets, pick, right=True))
        index = pick - (int(offsets[which - 1]) if which else 0)
        param = params[which]
        analytic = float(param.grad.view(-1)[index])

        with torch.no_grad():
            original = float(param.view(-1)[index])
            param.view(-1)[index] = original + STEP
            upper = float(loss())
            param.view(-1)[index] = original - STEP
            lower = float(loss())
            param.view(-1)[index] = original
        numeric = (upper - lower) / (2 * STEP)

        scale = max(abs(analytic), abs(numeric), FLOOR)
        assert abs(analytic - numeric) / scale <= TOLERANCE, (which, index, analytic, numeric)
