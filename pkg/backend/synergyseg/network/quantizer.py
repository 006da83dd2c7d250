"""Volumetric vector quantization of bottleneck features.

Every spatial location of a (batch, D, x, y, z) feature map is replaced by its
nearest codebook row. Gradients reach the encoder through the straight-through
estimator; the codebook itself learns either by exponential moving averages of
its assigned vectors (default) or by gradient descent on the codebook loss.
"""

import logging
from typing import Literal, NamedTuple, Optional

import torch
import torch.nn.functional as F
from torch import Tensor, nn

from synergyseg.errors import DimensionMismatch, ShapeIncompatible

logger = logging.getLogger(__name__)

CodebookUpdate = Literal["ema", "gradient"]


class Codebook(nn.Module):
    """K x D embedding table with an exponential moving average of code usage."""

    embeddings: Tensor
    usage_ema: Tensor

    def __init__(
        self,
        size: int,
        dim: int,
        decay: float = 0.99,
        update: CodebookUpdate = "ema",
        init: Optional[Tensor] = None,
    ):
        super().__init__()
        if size < 2:
            raise ValueError(f"codebook needs at least 2 codes, got {size}")
        if not 0.0 < decay < 1.0:
            raise ValueError(f"codebook decay must lie in (0, 1), got {decay}")
        if init is None:
            init = torch.empty(size, dim).uniform_(-1.0 / size, 1.0 / size)
        elif tuple(init.shape) != (size, dim):
            raise DimensionMismatch(f"initial codebook shape {tuple(init.shape)} != {(size, dim)}")
        if not torch.isfinite(init).all():
            raise ValueError("codebook rows must be finite")

        self.size = size
        self.dim = dim
        self.decay = decay
        self.update = update
        if update == "ema":
            self.register_buffer("embeddings", init.clone())
        else:
            self.embeddings = nn.Parameter(init.clone())
        self.register_buffer("usage_ema", torch.zeros(size, dtype=init.dtype))


class Quantized(NamedTuple):
    zq: Tensor
    indices: Tensor
    vq_loss: Tensor
    commit_loss: Tensor
    perplexity: Tensor


def _flatten(z: Tensor) -> Tensor:
    return z.movedim(1, -1).reshape(-1, z.shape[1])


def nearest_codes(flat: Tensor, embeddings: Tensor) -> Tensor:
    """Index of the nearest row per input vector; the smallest index wins ties."""
    with torch.no_grad():
        distances = torch.cdist(
            flat, embeddings.to(flat.dtype), compute_mode="donot_use_mm_for_euclid_dist"
        )
        return distances.argmin(dim=1)


def code_perplexity(indices: Tensor, size: int) -> Tensor:
    """exp of the entropy of the empirical code distribution, in [1, size]."""
    counts = torch.bincount(indices.reshape(-1), minlength=size).to(torch.float64)
    probs = counts / counts.sum()
    return torch.exp(torch.special.entr(probs).sum())


def vq_quantize(z: Tensor, codebook: Codebook) -> Quantized:
    """Snap each location of ``z`` to its nearest code.

    ``vq_loss`` moves codes toward the (detached) features and ``commit_loss``
    keeps features close to their (detached) codes; both are element-wise MSE.
    """
    if z.dim() != 5:
        raise ShapeIncompatible(f"expected (batch, D, x, y, z) features, got {tuple(z.shape)}")
    if z.shape[1] != codebook.dim:
        raise DimensionMismatch(f"feature channels {z.shape[1]} != codebook dim {codebook.dim}")

    flat = _flatten(z)
    indices = nearest_codes(flat, codebook.embeddings)
    selected = codebook.embeddings.to(z.dtype)[indices]
    quantized = selected.reshape(z.shape[0], *z.shape[2:], z.shape[1]).movedim(-1, 1)

    vq_loss = F.mse_loss(quantized, z.detach())
    commit_loss = F.mse_loss(z, quantized.detach())
    zq = z + (quantized - z).detach()
    return Quantized(
        zq=zq,
        indices=indices.reshape(z.shape[0], *z.shape[2:]),
        vq_loss=vq_loss,
        commit_loss=commit_loss,
        perplexity=code_perplexity(indices, codebook.size),
    )


class VectorQuantizer(nn.Module):
    """Module wrapper so a bottleneck can hold (and tests can replace) its quantizer."""

    def __init__(self, codebook: Codebook):
        super().__init__()
        self.codebook = codebook

    def forward(self, z: Tensor) -> Quantized:
        return vq_quantize(z, self.codebook)


@torch.no_grad()
def codebook_update(
    codebook: Codebook, z: Tensor, indices: Tensor, update_embeddings: Optional[bool] = None
) -> Codebook:
    """EMA step: ``e_k <- decay e_k + (1 - decay) mean(z assigned to k)``.

    Codes without assignments keep their rows. ``usage_ema`` decays for every
    code and gains ``(1 - decay) * count``. In gradient mode only the usage is
    tracked unless ``update_embeddings`` forces the row update.
    """
    if update_embeddings is None:
        update_embeddings = codebook.update == "ema"
    flat = _flatten(z.detach()).to(codebook.embeddings.dtype)
    idx = indices.reshape(-1)
    if idx.numel() and (int(idx.min()) < 0 or int(idx.max()) >= codebook.size):
        raise ValueError("code indices out of range")

    counts = torch.bincount(idx, minlength=codebook.size).to(flat.dtype)
    decay = codebook.decay
    if update_embeddings:
        sums = torch.zeros_like(codebook.embeddings).index_add_(0, idx, flat)
        assigned = counts > 0
        means = sums[assigned] / counts[assigned].unsqueeze(1)
        rows = codebook.embeddings.data
        rows[assigned] = decay * rows[assigned] + (1.0 - decay) * means
    codebook.usage_ema.mul_(decay).add_((1.0 - decay) * counts)
    return codebook


@torch.no_grad()
def reseed_dead_codes(
    codebook: Codebook, z: Tensor, threshold: float, generator: Optional[torch.Generator] = None
) -> int:
    """Replace codes whose usage fell below ``threshold`` by random encoder outputs."""
    dead = (codebook.usage_ema < threshold).nonzero().flatten()
    if dead.numel() == 0:
        return 0
    flat = _flatten(z.detach()).to(codebook.embeddings.dtype)
    picks = torch.randint(0, flat.shape[0], (dead.numel(),), generator=generator)
    codebook.embeddings.data[dead] = flat[picks]
    logger.warning(f"Re-seeded {dead.numel()} of {codebook.size} dead codes")
    return int(dead.numel())
