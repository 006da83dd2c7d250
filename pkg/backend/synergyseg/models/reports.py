"""Confusion counts, surface distances and metrics reports."""

from typing import Any, Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from synergyseg.models.artifacts import Provenance


class ConfusionCounts(BaseModel):
    """Voxel-level confusion matrix of a binary prediction."""

    tp: int = Field(ge=0)
    fp: int = Field(ge=0)
    fn: int = Field(ge=0)
    tn: int = Field(ge=0)

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.fn + self.tn


class SurfaceDistanceSet(BaseModel):
    """Directed boundary distances in mm, one entry per boundary voxel."""

    model_config = ConfigDict(arbitrary_types_allowed=True)

    d_pred_to_gt: np.ndarray
    d_gt_to_pred: np.ndarray

    @field_validator("d_pred_to_gt", "d_gt_to_pred", mode="before")
    @classmethod
    def check_distances(cls, value: Any) -> np.ndarray:
        distances = np.asarray(value, dtype=np.float64).ravel()
        if (distances < 0).any() or not np.isfinite(distances).all():
            raise ValueError("distances must be finite and nonnegative")
        return distances

    def combined(self) -> np.ndarray:
        return np.concatenate([self.d_pred_to_gt, self.d_gt_to_pred])


class CaseMetrics(BaseModel):
    """Metrics of one case; distances are null when a surface is empty."""

    dice: float = Field(ge=0.0, le=1.0)
    iou: float = Field(ge=0.0, le=1.0)
    precision: float = Field(ge=0.0, le=1.0)
    recall: float = Field(ge=0.0, le=1.0)
    hd95_mm: Optional[float] = Field(default=None, ge=0.0)
    assd_mm: Optional[float] = Field(default=None, ge=0.0)


class AggregateMetrics(BaseModel):
    """Unweighted means over cases; distance means skip excluded cases."""

    dice: float = Field(ge=0.0, le=1.0)
    iou: float = Field(ge=0.0, le=1.0)
    precision: float = Field(ge=0.0, le=1.0)
    recall: float = Field(ge=0.0, le=1.0)
    hd95_mm: Optional[float] = Field(default=None, ge=0.0)
    assd_mm: Optional[float] = Field(default=None, ge=0.0)


class MetricsReport(BaseModel):
    """Per-case and aggregated segmentation metrics for one split."""

    label: str = ""
    split: str = "test"
    per_case: dict[str, CaseMetrics] = Field(default_factory=dict)
    aggregate: AggregateMetrics
    n_cases: int = Field(ge=0)
    excluded_cases: list[str] = Field(default_factory=list)
    provenance: Optional[Provenance] = None

    @model_validator(mode="after")
    def check_counts(self) -> "MetricsReport":
        if self.per_case and len(self.per_case) != self.n_cases:
            raise ValueError("n_cases must match the number of per-case entries")
        return self
