"""Low-resolution and coarse-to-fine cascade wrappers, and the plan-driven model factory."""

import math
from collections.abc import Sequence
from typing import Optional, Union

import torch
import torch.nn.functional as F
from torch import Tensor, nn

from synergyseg.errors import ShapeIncompatible
from synergyseg.models import PlanConfig, Variant
from synergyseg.network.unet import SegmentationOutput, SynergyUNet


def coarse_size(shape: Sequence[int], scale: Sequence[int]) -> tuple[int, ...]:
    """Grid of a volume downsampled by ``scale``; partial cells round up."""
    return tuple(max(1, math.ceil(e / s)) for e, s in zip(shape, scale))


def downsample(x: Tensor, scale: tuple[int, int, int]) -> Tensor:
    """Trilinear downsampling by integer per-axis factors; identity scale returns ``x``."""
    if all(s == 1 for s in scale):
        return x
    for axis, (extent, factor) in enumerate(zip(x.shape[2:], scale)):
        if extent % factor:
            raise ShapeIncompatible(f"axis {axis} extent {extent} not divisible by scale {factor}")
    size = [e // s for e, s in zip(x.shape[2:], scale)]
    return F.interpolate(x, size=size, mode="trilinear", align_corners=False)


def upsample_to(x: Tensor, size: tuple[int, ...]) -> Tensor:
    if tuple(x.shape[2:]) == tuple(size):
        return x
    return F.interpolate(x, size=list(size), mode="trilinear", align_corners=False)


class LowResModel(nn.Module):
    """Runs a network on a downsampled input and returns upsampled logits."""

    def __init__(self, net: nn.Module, lowres_scale: tuple[int, int, int]):
        super().__init__()
        self.net = net
        self.lowres_scale = tuple(lowres_scale)

    @property
    def trainable_net(self) -> nn.Module:
        return self.net

    def forward(self, x: Tensor) -> SegmentationOutput:
        out: SegmentationOutput = self.net(downsample(x, self.lowres_scale))  # type: ignore[arg-type]
        return out._replace(logits=upsample_to(out.logits, tuple(x.shape[2:])))


class CascadeModel(nn.Module):
    """Low-resolution prediction refined by a full-resolution network.

    The low-resolution sigmoid prediction, upsampled to the image grid, is the
    second input channel of ``fullres_net``. Sliding-window callers compute it
    once over the whole downsampled volume and pass the matching crop as
    ``prior``; without one it is computed from ``x`` itself. While
    ``refine_only`` is set the low-resolution branch runs without gradients.
    """

    def __init__(
        self,
        lowres_net: nn.Module,
        fullres_net: nn.Module,
        lowres_scale: tuple[int, int, int],
        refine_only: bool = True,
    ):
        super().__init__()
        self.lowres_net = lowres_net
        self.fullres_net = fullres_net
        self.lowres_scale = tuple(lowres_scale)
        self.refine_only = refine_only

    @property
    def trainable_net(self) -> nn.Module:
        return self.fullres_net

    def lowres_model(self) -> LowResModel:
        return LowResModel(self.lowres_net, self.lowres_scale)  # type: ignore[arg-type]

    def prior(self, x: Tensor) -> Tensor:
        with torch.set_grad_enabled(torch.is_grad_enabled() and not self.refine_only):
            coarse: SegmentationOutput = self.lowres_net(downsample(x, self.lowres_scale))
            return upsample_to(torch.sigmoid(coarse.logits), tuple(x.shape[2:]))

    def forward(self, x: Tensor, prior: Optional[Tensor] = None) -> SegmentationOutput:
        if x.dim() != 5:
            raise ShapeIncompatible(f"expected (batch, C, x, y, z) input, got {tuple(x.shape)}")
        if prior is None:
            prior = self.prior(x)
        elif prior.shape[0] != x.shape[0] or prior.shape[2:] != x.shape[2:]:
            raise ShapeIncompatible(
                f"prior {tuple(prior.shape)} does not match input {tuple(x.shape)}"
            )
        return self.fullres_net(torch.cat([x, prior], dim=1))  # type: ignore[no-any-return]


SegmentationModel = Union[SynergyUNet, LowResModel, CascadeModel]


def forward_cascade(model: CascadeModel, volume: Tensor) -> Tensor:
    """Cascade logits for a whole (batch, 1, x, y, z) volume."""
    return model(volume).logits  # type: ignore[no-any-return]


def build_model(plan: PlanConfig) -> SegmentationModel:
    """Model for the plan's variant; the cascade's refiner takes image + prior channels."""
    if plan.variant == Variant.FULLRES:
        return SynergyUNet(plan, in_channels=1)
    if plan.variant == Variant.LOWRES:
        return LowResModel(SynergyUNet(plan, in_channels=1), plan.lowres_scale)
    return CascadeModel(
        SynergyUNet(plan, in_channels=1), SynergyUNet(plan, in_channels=2), plan.lowres_scale
    )
