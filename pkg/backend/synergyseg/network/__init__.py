"""Torch modules: encoder-decoder, synergy bottleneck and cascade."""

from synergyseg.network.attention import CrossAttention3d, cross_attend
from synergyseg.network.bottleneck import SynergyBottleneck, SynergyOutput
from synergyseg.network.cascade import (
    CascadeModel,
    LowResModel,
    SegmentationModel,
    build_model,
    coarse_size,
    forward_cascade,
)
from synergyseg.network.checkpoint import (
    CHECKPOINT_NAME,
    LoadedCheckpoint,
    load_checkpoint,
    save_checkpoint,
)
from synergyseg.network.quantizer import (
    Codebook,
    Quantized,
    VectorQuantizer,
    codebook_update,
    reseed_dead_codes,
    vq_quantize,
)
from synergyseg.network.unet import SegmentationOutput, SynergyUNet

__all__ = [
    "CHECKPOINT_NAME",
    "CascadeModel",
    "Codebook",
    "CrossAttention3d",
    "LoadedCheckpoint",
    "LowResModel",
    "Quantized",
    "SegmentationModel",
    "SegmentationOutput",
    "SynergyBottleneck",
    "SynergyOutput",
    "SynergyUNet",
    "VectorQuantizer",
    "build_model",
    "coarse_size",
    "codebook_update",
    "cross_attend",
    "forward_cascade",
    "load_checkpoint",
    "reseed_dead_codes",
    "save_checkpoint",
    "vq_quantize",
]
