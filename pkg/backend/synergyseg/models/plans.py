"""Dataset fingerprints, memory budgets and training plans."""

import math
from enum import Enum
from typing import Literal, Optional

from pydantic import BaseModel, Field, field_validator, model_validator

from synergyseg.models.artifacts import Provenance
from synergyseg.models.volumes import Shape3, Vector3


class Variant(str, Enum):
    """U-Net configuration variants."""

    FULLRES = "fullres3d"
    LOWRES = "lowres3d"
    CASCADE = "cascade3d"


class DatasetFingerprint(BaseModel):
    """Corpus statistics that drive planning, computed over the training split."""

    median_shape: Shape3
    median_spacing: Vector3
    intensity_p0_5: float
    intensity_p99_5: float
    intensity_mean: float
    intensity_std: float = Field(ge=0.0)
    foreground_fraction: float = Field(ge=0.0, le=1.0)
    n_cases: int = Field(ge=1)
    resample_shape: Optional[Shape3] = None
    modalities: list[str] = Field(default_factory=list)
    provenance: Optional[Provenance] = None

    @model_validator(mode="after")
    def check_percentiles(self) -> "DatasetFingerprint":
        if self.intensity_p0_5 > self.intensity_p99_5:
            raise ValueError("intensity_p0_5 must not exceed intensity_p99_5")
        return self


class MemoryBudget(BaseModel):
    """Bytes a single training replica may use."""

    bytes_available: int = Field(gt=0)
    safety_factor: float = Field(default=1.0, gt=0.0, le=1.0)

    @classmethod
    def from_gb(cls, gigabytes: float, safety_factor: float = 1.0) -> "MemoryBudget":
        return cls(bytes_available=max(1, int(gigabytes * 1024**3)), safety_factor=safety_factor)

    @property
    def usable_bytes(self) -> float:
        return self.bytes_available * self.safety_factor


class PlanConfig(BaseModel):
    """Network topology, patch/batch size and bottleneck hyperparameters."""

    variant: Variant = Variant.FULLRES
    patch_size: Shape3
    batch_size: int = Field(ge=1)
    n_stages: int = Field(ge=1)
    channels_per_stage: list[int]
    pooling_per_axis_per_stage: list[tuple[int, int, int]]
    lowres_scale: tuple[int, int, int] = (1, 1, 1)
    codebook_size: int = Field(default=256, ge=2)
    latent_dim: int = Field(default=64, ge=1)
    attention_heads: int = Field(default=4, ge=1)
    commitment_beta: float = Field(default=0.25, ge=0.0)
    codebook_decay: float = Field(default=0.99, gt=0.0, lt=1.0)
    codebook_update: Literal["ema", "gradient"] = "ema"
    query_source: Literal["continuous", "discrete"] = "continuous"
    resample_shape: Optional[Shape3] = None
    provenance: Optional[Provenance] = None

    @field_validator("pooling_per_axis_per_stage")
    @classmethod
    def check_pooling_binary(cls, value: list[tuple[int, int, int]]) -> list[tuple[int, int, int]]:
        for vector in value:
            if any(p not in (0, 1) for p in vector):
                raise ValueError(f"pooling vectors must be binary, got {vector}")
        return value

    @field_validator("lowres_scale")
    @classmethod
    def check_lowres_scale(cls, value: tuple[int, int, int]) -> tuple[int, int, int]:
        if any(s < 1 for s in value):
            raise ValueError(f"lowres_scale factors must be >= 1, got {value}")
        return value

    @model_validator(mode="after")
    def check_topology(self) -> "PlanConfig":
        if len(self.channels_per_stage) != self.n_stages:
            raise ValueError("channels_per_stage must have one entry per stage")
        if len(self.pooling_per_axis_per_stage) != self.n_stages - 1:
            raise ValueError("pooling_per_axis_per_stage must have n_stages - 1 entries")
        if any(c < 1 for c in self.channels_per_stage):
            raise ValueError("channel counts must be positive")
        if any(b < a for a, b in zip(self.channels_per_stage, self.channels_per_stage[1:])):
            raise ValueError("channels_per_stage must be nondecreasing")
        for axis, extent in enumerate(self.patch_size):
            factor = self.pooling_factors[axis]
            if extent < 1 or extent % factor:
                raise ValueError(
                    f"patch axis {axis} ({extent}) not divisible by its pooling product {factor}"
                )
        if self.variant != Variant.FULLRES:
            for axis, (extent, scale) in enumerate(zip(self.patch_size, self.lowres_scale)):
                if extent % (scale * self.pooling_factors[axis]):
                    raise ValueError(
                        f"patch axis {axis} ({extent}) must stay divisible by its pooling "
                        f"product after low-resolution scaling by {scale}"
                    )
        if self.latent_dim % self.attention_heads:
            raise ValueError("latent_dim must be divisible by attention_heads")
        return self

    @property
    def pooling_factors(self) -> tuple[int, int, int]:
        """Cumulative downsampling factor per axis from stage 0 to the bottleneck."""
        return tuple(  # type: ignore[return-value]
            2 ** sum(vector[axis] for vector in self.pooling_per_axis_per_stage) for axis in range(3)
        )

    def stage_shapes(self) -> list[Shape3]:
        """Spatial shape of every encoder stage for a patch-sized input."""
        shapes = [self.patch_size]
        for vector in self.pooling_per_axis_per_stage:
            previous = shapes[-1]
            shapes.append(tuple(e // (2 if p else 1) for e, p in zip(previous, vector)))  # type: ignore[arg-type]
        return shapes

    @property
    def patch_voxels(self) -> int:
        return math.prod(self.patch_size)
