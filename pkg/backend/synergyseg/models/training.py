"""Training configuration and per-epoch records."""

from enum import Enum
from typing import Optional

from pydantic import BaseModel, Field, model_validator


class Schedule(str, Enum):
    """Learning-rate schedule values."""

    COSINE = "cosine"
    STEP = "step"


class LossWeights(BaseModel):
    """Weights of the objective terms."""

    bce: float = Field(default=1.0, ge=0.0)
    dice: float = Field(default=1.0, ge=0.0)
    vq: float = Field(default=1.0, ge=0.0)
    commit: float = Field(default=0.25, ge=0.0)


class TrainConfig(BaseModel):
    """Optimisation settings for one training run."""

    lr_init: float = Field(default=1e-4, gt=0.0)
    lr_min: float = Field(default=1e-6, ge=0.0)
    weight_decay: float = Field(default=1e-2, ge=0.0)
    grad_clip_norm: float = Field(default=12.0, gt=0.0)
    max_epochs: int = Field(default=500, ge=1)
    patience: int = Field(default=50, ge=0)
    steps_per_epoch: int = Field(default=25, ge=1)
    batch_size: Optional[int] = Field(default=None, ge=1)
    schedule: Schedule = Schedule.COSINE
    step_decay: float = Field(default=0.001, ge=0.0, lt=1.0)
    step_every: int = Field(default=10, ge=1)
    loss_weights: LossWeights = Field(default_factory=LossWeights)
    foreground_oversample: float = Field(default=0.5, ge=0.0, le=1.0)
    dead_code_threshold: float = Field(default=1e-3, ge=0.0)
    val_overlap: float = Field(default=0.5, ge=0.0, lt=1.0)
    seed: int = 0

    @model_validator(mode="after")
    def check_patience(self) -> "TrainConfig":
        if self.patience > self.max_epochs:
            raise ValueError("patience must not exceed max_epochs")
        if self.lr_min > self.lr_init:
            raise ValueError("lr_min must not exceed lr_init")
        return self


class EpochRecord(BaseModel):
    """One line of the JSON-lines training log."""

    stage: str
    epoch: int
    train_loss: float
    val_dice: float
    lr: float
    perplexity: float
