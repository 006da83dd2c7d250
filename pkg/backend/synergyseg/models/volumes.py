"""Volumes, label masks, dataset manifests and phantom specifications."""

from enum import Enum
from pathlib import Path
from typing import Any, Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, PrivateAttr, field_validator, model_validator

from synergyseg.models.artifacts import Provenance

Shape3 = tuple[int, int, int]
Vector3 = tuple[float, float, float]


def _check_spacing(value: Vector3) -> Vector3:
    if any(not np.isfinite(s) or s <= 0 for s in value):
        raise ValueError(f"spacing components must be finite and > 0, got {value}")
    return value


class Volume(BaseModel):
    """Dense 3D intensity grid, index order (x, y, z)."""

    model_config = ConfigDict(arbitrary_types_allowed=True)

    data: np.ndarray
    spacing: Vector3 = (1.0, 1.0, 1.0)
    origin: Vector3 = (0.0, 0.0, 0.0)
    modality_tag: str = ""

    @field_validator("data", mode="before")
    @classmethod
    def check_data(cls, value: Any) -> np.ndarray:
        data = np.asarray(value, dtype=np.float32)
        if data.ndim != 3 or min(data.shape) < 1:
            raise ValueError(f"volume must be 3D with every dimension >= 1, got {data.shape}")
        if not np.isfinite(data).all():
            raise ValueError("volume contains NaN or Inf")
        return data

    @field_validator("spacing")
    @classmethod
    def check_spacing(cls, value: Vector3) -> Vector3:
        return _check_spacing(value)

    @property
    def shape(self) -> Shape3:
        return tuple(int(s) for s in self.data.shape)  # type: ignore[return-value]


class LabelMask(BaseModel):
    """Binary label grid (0 background, 1 liver) aligned to a Volume."""

    model_config = ConfigDict(arbitrary_types_allowed=True)

    data: np.ndarray
    spacing: Vector3 = (1.0, 1.0, 1.0)
    origin: Vector3 = (0.0, 0.0, 0.0)

    @field_validator("data", mode="before")
    @classmethod
    def check_data(cls, value: Any) -> np.ndarray:
        data = np.asarray(value)
        if data.ndim != 3 or min(data.shape) < 1:
            raise ValueError(f"mask must be 3D with every dimension >= 1, got {data.shape}")
        if not np.all((data == 0) | (data == 1)):
            raise ValueError("mask values must lie in {0, 1}")
        return data.astype(np.uint8)

    @field_validator("spacing")
    @classmethod
    def check_spacing(cls, value: Vector3) -> Vector3:
        return _check_spacing(value)

    @property
    def shape(self) -> Shape3:
        return tuple(int(s) for s in self.data.shape)  # type: ignore[return-value]

    @property
    def foreground_voxels(self) -> int:
        return int(self.data.sum())


class Partition(str, Enum):
    """Dataset partition values."""

    TRAIN = "train"
    VAL = "val"
    TEST = "test"


class CaseEntry(BaseModel):
    """One case of a manifest; paths are relative to the manifest file."""

    id: str
    volume: str
    mask: Optional[str] = None
    modality: Optional[str] = None


class DatasetManifest(BaseModel):
    """Case list plus train/val/test assignment."""

    cases: list[CaseEntry]
    split: dict[str, Partition]
    seed: int = 0
    provenance: Optional[Provenance] = None

    _base_dir: Path = PrivateAttr(default_factory=Path.cwd)

    @model_validator(mode="after")
    def check_partition(self) -> "DatasetManifest":
        ids = [case.id for case in self.cases]
        if len(set(ids)) != len(ids):
            raise ValueError("case ids must be unique")
        if set(self.split) != set(ids):
            missing = sorted(set(ids) - set(self.split))
            unknown = sorted(set(self.split) - set(ids))
            raise ValueError(f"split must cover every case exactly (missing={missing}, unknown={unknown})")
        return self

    @property
    def base_dir(self) -> Path:
        return self._base_dir

    def with_base_dir(self, base_dir: Path) -> "DatasetManifest":
        self._base_dir = Path(base_dir)
        return self

    def resolve(self, path: str) -> Path:
        """Resolve a case path against the manifest directory."""
        candidate = Path(path)
        return candidate if candidate.is_absolute() else self._base_dir / candidate

    def case(self, case_id: str) -> CaseEntry:
        for entry in self.cases:
            if entry.id == case_id:
                return entry
        raise KeyError(case_id)

    def ids(self, partition: Partition) -> list[str]:
        """Case ids of one partition, in manifest order."""
        return [case.id for case in self.cases if self.split[case.id] == partition]


class PhantomSpec(BaseModel):
    """Parameters of one synthetic liver-like phantom."""

    grid_shape: Shape3 = (32, 32, 16)
    severity: float = Field(default=0.0, ge=0.0, le=1.0)
    noise_sigma: float = Field(default=0.0, ge=0.0)
    seed: int = 0
    modality_tag: str = "T1W"
