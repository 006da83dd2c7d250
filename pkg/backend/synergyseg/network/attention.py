"""Volumetric multi-head cross-attention."""

import math
from typing import Optional, Union

import torch
from torch import Tensor, nn

from synergyseg.errors import ShapeIncompatible


class CrossAttention3d(nn.Module):
    """Queries from one feature map attend over every location of another.

    Spatial locations are flattened to a sequence; no positional encoding is
    added. The output keeps the query map's shape and adds the projected
    attention result to it as a residual.
    """

    def __init__(self, channels: int, heads: int):
        super().__init__()
        if heads < 1 or channels % heads:
            raise ShapeIncompatible(f"{channels} channels cannot be split into {heads} heads")
        self.channels = channels
        self.heads = heads
        self.head_dim = channels // heads
        self.query = nn.Linear(channels, channels)
        self.key = nn.Linear(channels, channels)
        self.value = nn.Linear(channels, channels)
        self.proj = nn.Linear(channels, channels)

    def _split_heads(self, x: Tensor) -> Tensor:
        batch, length, _ = x.shape
        return x.view(batch, length, self.heads, self.head_dim).transpose(1, 2)

    def forward(
        self, queries: Tensor, context: Tensor, return_weights: bool = False
    ) -> Union[Tensor, tuple[Tensor, Tensor]]:
        if queries.dim() != 5 or context.dim() != 5:
            raise ShapeIncompatible("cross-attention expects (batch, C, x, y, z) inputs")
        if queries.shape[2:] != context.shape[2:] or queries.shape[0] != context.shape[0]:
            raise ShapeIncompatible(
                f"query map {tuple(queries.shape)} and context {tuple(context.shape)} differ"
            )
        if queries.shape[1] != self.channels or context.shape[1] != self.channels:
            raise ShapeIncompatible(f"expected {self.channels} channels on both inputs")

        batch = queries.shape[0]
        q_seq = queries.flatten(2).transpose(1, 2)
        c_seq = context.flatten(2).transpose(1, 2)
        q = self._split_heads(self.query(q_seq))
        k = self._split_heads(self.key(c_seq))
        v = self._split_heads(self.value(c_seq))

        weights = torch.softmax(q @ k.transpose(-2, -1) / math.sqrt(self.head_dim), dim=-1)
        attended = (weights @ v).transpose(1, 2).reshape(batch, -1, self.channels)
        fused = (q_seq + self.proj(attended)).transpose(1, 2).reshape(queries.shape)
        if return_weights:
            return fused, weights
        return fused


def cross_attend(
    f1: Tensor, f2: Tensor, attention: CrossAttention3d, weights_out: Optional[list[Tensor]] = None
) -> Tensor:
    """Fuse continuous features ``f1`` (queries) with discrete features ``f2`` (keys/values)."""
    fused, weights = attention(f1, f2, return_weights=True)
    if weights_out is not None:
        weights_out.append(weights)
    return fused
