"""Per-command run configurations resolved from flags, a JSON file and defaults."""

from pathlib import Path
from typing import Any, Optional

from pydantic import BaseModel, ConfigDict, Field, model_validator

from synergyseg.models.artifacts import Provenance
from synergyseg.models.plans import Variant
from synergyseg.models.training import TrainConfig
from synergyseg.models.volumes import Partition, Shape3


class RunConfig(BaseModel):
    """Base for command configs; unknown keys are rejected."""

    model_config = ConfigDict(extra="forbid")

    seed: int = 0


class PhantomRunConfig(RunConfig):
    n: int = 10
    grids: list[Shape3] = Field(default_factory=lambda: [(32, 32, 16)])
    severity: float = Field(default=0.0, ge=0.0, le=1.0)
    noise: float = Field(default=0.1, ge=0.0)
    modality: str = "T1W"
    out: Path = Path("phantoms")


class FingerprintRunConfig(RunConfig):
    manifest: Path
    resample_shape: Optional[Shape3] = None
    out: Path = Path("fingerprint.json")


class PlanRunConfig(RunConfig):
    fingerprint: Path
    budget_gb: Optional[float] = Field(default=None, gt=0.0)
    default: bool = False
    variant: Optional[Variant] = None
    out: Path = Path("plan.json")


class TrainRunConfig(RunConfig):
    """Training command config.

    An explicit top-level ``seed`` (flag or config file) wins over ``train.seed``;
    either way both end up equal.
    """

    manifest: Path
    plan: Path
    out: Path = Path("run")
    train: TrainConfig = Field(default_factory=TrainConfig)

    @model_validator(mode="after")
    def sync_seed(self) -> "TrainRunConfig":
        if "seed" not in self.model_fields_set and "seed" in self.train.model_fields_set:
            self.seed = self.train.seed
        elif self.train.seed != self.seed:
            self.train = self.train.model_copy(update={"seed": self.seed})
        return self


class PredictRunConfig(RunConfig):
    checkpoint: Path
    manifest: Path
    split: Partition = Partition.TEST
    out: Path = Path("predictions")


class EvaluateRunConfig(RunConfig):
    pred: Path
    manifest: Path
    split: Partition = Partition.TEST
    label: str = ""
    out: Path = Path("report.json")


class ReportRunConfig(RunConfig):
    reports: list[Path]
    names: list[str] = Field(default_factory=list)
    out: Optional[Path] = None
    csv: Optional[Path] = None


class ZeroShotRunConfig(RunConfig):
    checkpoint: Path
    manifest: Path
    split: Partition = Partition.TEST
    out: Path = Path("zeroshot")


class RunSummary(BaseModel):
    """Provenance-carrying record of a command whose main outputs are not JSON."""

    command: str
    outputs: dict[str, Any] = Field(default_factory=dict)
    provenance: Optional[Provenance] = None
