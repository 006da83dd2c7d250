"""Versioned checkpoint container."""

import logging
from pathlib import Path
from typing import NamedTuple, Union

import torch
from pydantic import ValidationError
from torch import nn

from synergyseg.errors import CheckpointError, IOFailure
from synergyseg.models import PlanConfig
from synergyseg.network.cascade import SegmentationModel, build_model
from synergyseg.network.quantizer import Codebook

logger = logging.getLogger(__name__)

CHECKPOINT_VERSION = 1
CHECKPOINT_NAME = "checkpoint.pt"


class LoadedCheckpoint(NamedTuple):
    model: SegmentationModel
    plan: PlanConfig
    epoch: int
    best_val_dice: float


def codebooks(model: nn.Module) -> dict[str, torch.Tensor]:
    """Codebook matrices keyed by their module path."""
    return {
        name: module.embeddings.detach().clone()
        for name, module in model.named_modules()
        if isinstance(module, Codebook)
    }


def save_checkpoint(
    path: Union[str, Path],
    model: nn.Module,
    plan: PlanConfig,
    epoch: int,
    best_val_dice: float,
) -> Path:
    path = Path(path)
    payload = {
        "version": CHECKPOINT_VERSION,
        "plan": plan.model_dump_json(exclude={"provenance"}),
        "state_dict": model.state_dict(),
        "codebooks": codebooks(model),
        "epoch": int(epoch),
        "best_val_dice": float(best_val_dice),
    }
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        torch.save(payload, path)
    except OSError as e:
        raise IOFailure(f"Failed to write checkpoint {path}: {e}") from e
    logger.debug(f"Saved checkpoint (epoch {epoch}, best dice {best_val_dice:.4f}) to {path}")
    return path


def load_checkpoint(path: Union[str, Path]) -> LoadedCheckpoint:
    """Rebuild the model described by the stored plan and load its parameters."""
    path = Path(path)
    if not path.is_file():
        raise CheckpointError(f"checkpoint not found: {path}")
    try:
        payload = torch.load(path, map_location="cpu", weights_only=True)
    except Exception as e:
        raise CheckpointError(f"unreadable checkpoint {path}: {e}") from e

    version = payload.get("version") if isinstance(payload, dict) else None
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version!r} in {path}")
    try:
        plan = PlanConfig.model_validate_json(payload["plan"])
        model = build_model(plan)
        model.load_state_dict(payload["state_dict"])
    except (KeyError, ValidationError, RuntimeError) as e:
        raise CheckpointError(f"checkpoint {path} does not match its plan: {e}") from e
    model.eval()
    return LoadedCheckpoint(
        model=model,
        plan=plan,
        epoch=int(payload["epoch"]),
        best_val_dice=float(payload["best_val_dice"]),
    )
