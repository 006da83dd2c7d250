"""Bottleneck fusing a continuous latent with its vector-quantized counterpart."""

from typing import Literal, NamedTuple

from torch import Tensor, nn

from synergyseg.network.attention import CrossAttention3d, cross_attend
from synergyseg.network.quantizer import Codebook, CodebookUpdate, VectorQuantizer

QuerySource = Literal["continuous", "discrete"]


class SynergyOutput(NamedTuple):
    fused: Tensor
    indices: Tensor
    vq_loss: Tensor
    commit_loss: Tensor
    perplexity: Tensor
    # pre-quantization features, consumed by the codebook update
    latent: Tensor


class SynergyBottleneck(nn.Module):
    """``f1`` gives the continuous latent F1, ``f2`` the features quantized into F2.

    F1 queries F2 by default; ``query_source="discrete"`` reverses the roles.
    The fused map has ``latent_dim`` channels.
    """

    def __init__(
        self,
        in_channels: int,
        latent_dim: int,
        codebook_size: int,
        heads: int,
        commitment_beta: float = 0.25,
        codebook_decay: float = 0.99,
        codebook_update: CodebookUpdate = "ema",
        query_source: QuerySource = "continuous",
    ):
        super().__init__()
        self.f1_projection = nn.Conv3d(in_channels, latent_dim, kernel_size=1)
        self.f2_projection = nn.Conv3d(in_channels, latent_dim, kernel_size=1)
        self.quantizer = VectorQuantizer(
            Codebook(codebook_size, latent_dim, decay=codebook_decay, update=codebook_update)
        )
        self.attention = CrossAttention3d(latent_dim, heads)
        self.commitment_beta = commitment_beta
        self.query_source = query_source

    @property
    def codebook(self) -> Codebook:
        return self.quantizer.codebook

    def forward(self, feat: Tensor) -> SynergyOutput:
        f1 = self.f1_projection(feat)
        z = self.f2_projection(feat)
        quantized = self.quantizer(z)
        if self.query_source == "continuous":
            fused = cross_attend(f1, quantized.zq, self.attention)
        else:
            fused = cross_attend(quantized.zq, f1, self.attention)
        return SynergyOutput(
            fused=fused,
            indices=quantized.indices,
            vq_loss=quantized.vq_loss,
            commit_loss=quantized.commit_loss,
            perplexity=quantized.perplexity,
            latent=z,
        )

    def aux_loss(self, output: SynergyOutput) -> Tensor:
        return output.vq_loss + self.commitment_beta * output.commit_loss
