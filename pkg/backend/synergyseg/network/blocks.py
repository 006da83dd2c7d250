"""Convolutional building blocks shared by encoder and decoder."""

from collections.abc import Sequence

import torch
from torch import Tensor, nn

NEGATIVE_SLOPE = 0.01


class ConvBlock(nn.Sequential):
    """Two 3x3x3 convolutions, each followed by instance norm and leaky ReLU.

    The first convolution carries the stage's per-axis stride, so a pooling
    vector ``(1, 1, 0)`` halves x and y and keeps z.
    """

    def __init__(self, in_channels: int, out_channels: int, stride: Sequence[int] = (1, 1, 1)):
        stride = tuple(int(s) for s in stride)
        super().__init__(
            nn.Conv3d(in_channels, out_channels, kernel_size=3, stride=stride, padding=1),
            nn.InstanceNorm3d(out_channels, affine=True),
            nn.LeakyReLU(NEGATIVE_SLOPE, inplace=True),
            nn.Conv3d(out_channels, out_channels, kernel_size=3, padding=1),
            nn.InstanceNorm3d(out_channels, affine=True),
            nn.LeakyReLU(NEGATIVE_SLOPE, inplace=True),
        )


class UpBlock(nn.Module):
    """Transposed-convolution upsampling by a pooling vector, skip concatenation, ConvBlock."""

    def __init__(
        self, in_channels: int, skip_channels: int, out_channels: int, pooling: Sequence[int]
    ):
        super().__init__()
        factor = tuple(2 if p else 1 for p in pooling)
        self.upsample = nn.ConvTranspose3d(
            in_channels, skip_channels, kernel_size=factor, stride=factor
        )
        self.conv = ConvBlock(2 * skip_channels, out_channels)

    def forward(self, x: Tensor, skip: Tensor) -> Tensor:
        return self.conv(torch.cat([self.upsample(x), skip], dim=1))
