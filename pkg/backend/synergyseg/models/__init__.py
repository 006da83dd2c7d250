"""Data models."""

from synergyseg.models.artifacts import Provenance
from synergyseg.models.plans import DatasetFingerprint, MemoryBudget, PlanConfig, Variant
from synergyseg.models.reports import (
    AggregateMetrics,
    CaseMetrics,
    ConfusionCounts,
    MetricsReport,
    SurfaceDistanceSet,
)
from synergyseg.models.runs import (
    EvaluateRunConfig,
    FingerprintRunConfig,
    PhantomRunConfig,
    PlanRunConfig,
    PredictRunConfig,
    ReportRunConfig,
    RunConfig,
    RunSummary,
    TrainRunConfig,
    ZeroShotRunConfig,
)
from synergyseg.models.training import EpochRecord, LossWeights, Schedule, TrainConfig
from synergyseg.models.volumes import (
    CaseEntry,
    DatasetManifest,
    LabelMask,
    Partition,
    PhantomSpec,
    Shape3,
    Vector3,
    Volume,
)

__all__ = [
    "Provenance",
    "Volume",
    "LabelMask",
    "Partition",
    "CaseEntry",
    "DatasetManifest",
    "PhantomSpec",
    "Shape3",
    "Vector3",
    "DatasetFingerprint",
    "MemoryBudget",
    "PlanConfig",
    "Variant",
    "ConfusionCounts",
    "SurfaceDistanceSet",
    "CaseMetrics",
    "AggregateMetrics",
    "MetricsReport",
    "LossWeights",
    "Schedule",
    "TrainConfig",
    "EpochRecord",
    "RunConfig",
    "PhantomRunConfig",
    "FingerprintRunConfig",
    "PlanRunConfig",
    "TrainRunConfig",
    "PredictRunConfig",
    "EvaluateRunConfig",
    "ReportRunConfig",
    "ZeroShotRunConfig",
    "RunSummary",
]
