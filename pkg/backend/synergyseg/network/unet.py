"""Encoder-decoder network with skip connections around the synergy bottleneck."""

from typing import NamedTuple, Optional

import torch
from torch import Tensor, nn

from synergyseg.errors import ShapeIncompatible
from synergyseg.models import PlanConfig
from synergyseg.network.blocks import ConvBlock, UpBlock
from synergyseg.network.bottleneck import SynergyBottleneck, SynergyOutput


class SegmentationOutput(NamedTuple):
    logits: Tensor
    vq_loss: Tensor
    commit_loss: Tensor
    perplexity: Tensor
    indices: Optional[Tensor] = None
    latent: Optional[Tensor] = None


def _stride(pooling: tuple[int, int, int]) -> tuple[int, int, int]:
    return tuple(2 if p else 1 for p in pooling)  # type: ignore[return-value]


class SynergyUNet(nn.Module):
    """3D U-Net whose deepest stage feeds a SynergyBottleneck.

    Stage ``s`` has ``plan.channels_per_stage[s]`` channels; the transition into
    stage ``s`` strides by ``plan.pooling_per_axis_per_stage[s - 1]``. The head
    emits one logit channel.
    """

    def __init__(self, plan: PlanConfig, in_channels: int = 1):
        super().__init__()
        self.plan = plan
        self.in_channels = in_channels
        channels = plan.channels_per_stage
        pooling = plan.pooling_per_axis_per_stage

        self.encoder = nn.ModuleList([ConvBlock(in_channels, channels[0])])
        for stage in range(1, plan.n_stages):
            self.encoder.append(
                ConvBlock(channels[stage - 1], channels[stage], stride=_stride(pooling[stage - 1]))
            )

        self.bottleneck = SynergyBottleneck(
            channels[-1],
            plan.latent_dim,
            plan.codebook_size,
            plan.attention_heads,
            commitment_beta=plan.commitment_beta,
            codebook_decay=plan.codebook_decay,
            codebook_update=plan.codebook_update,
            query_source=plan.query_source,
        )

        self.decoder = nn.ModuleList()
        previous = plan.latent_dim
        for stage in reversed(range(plan.n_stages - 1)):
            self.decoder.append(UpBlock(previous, channels[stage], channels[stage], pooling[stage]))
            previous = channels[stage]
        self.head = nn.Conv3d(previous, 1, kernel_size=1)

    @property
    def trainable_net(self) -> "SynergyUNet":
        return self

    def check_input(self, x: Tensor) -> None:
        if x.dim() != 5 or x.shape[1] != self.in_channels:
            raise ShapeIncompatible(
                f"expected (batch, {self.in_channels}, x, y, z) input, got {tuple(x.shape)}"
            )
        for axis, (extent, factor) in enumerate(zip(x.shape[2:], self.plan.pooling_factors)):
            if extent % factor:
                raise ShapeIncompatible(
                    f"axis {axis} extent {extent} is not divisible by its pooling product {factor}"
                )

    def encode(self, x: Tensor) -> list[Tensor]:
        """Feature pyramid, shallowest stage first."""
        self.check_input(x)
        features = []
        for block in self.encoder:
            x = block(x)
            features.append(x)
        return features

    def decode(self, fused: Tensor, skips: list[Tensor]) -> Tensor:
        """Upsample through the skip pyramid (deepest stage excluded) to patch-sized logits."""
        if len(skips) != len(self.decoder):
            raise ShapeIncompatible(f"expected {len(self.decoder)} skips, got {len(skips)}")
        x = fused
        for block, skip, stage in zip(
            self.decoder, reversed(skips), reversed(range(len(skips)))
        ):
            expected = tuple(
                e * f for e, f in zip(x.shape[2:], _stride(self.plan.pooling_per_axis_per_stage[stage]))
            )
            if tuple(skip.shape[2:]) != expected:
                raise ShapeIncompatible(
                    f"skip at stage {stage} has shape {tuple(skip.shape[2:])}, expected {expected}"
                )
            x = block(x, skip)
        return self.head(x)

    def forward(self, x: Tensor) -> SegmentationOutput:
        features = self.encode(x)
        synergy: SynergyOutput = self.bottleneck(features[-1])
        logits = self.decode(synergy.fused, features[:-1])
        return SegmentationOutput(
            logits=logits,
            vq_loss=synergy.vq_loss,
            commit_loss=synergy.commit_loss,
            perplexity=synergy.perplexity,
            indices=synergy.indices,
            latent=synergy.latent,
        )


def zero_aux(logits: Tensor) -> SegmentationOutput:
    """Output without bottleneck terms, for wrapping plain logits."""
    zero = torch.zeros((), dtype=logits.dtype, device=logits.device)
    return SegmentationOutput(
        logits=logits, vq_loss=zero, commit_loss=zero, perplexity=torch.ones((), dtype=torch.float64)
    )
