"""Sliding-window prediction, postprocessing and dataset-level prediction."""

import logging
import math
from collections.abc import Sequence
from itertools import product
from pathlib import Path
from typing import Any, Optional, Union

import numpy as np
import torch
import torch.nn.functional as F
from scipy.ndimage import gaussian_filter
from torch import nn

from synergyseg.models import DatasetManifest, LabelMask, Partition, PlanConfig, Shape3, Volume
from synergyseg.network import CascadeModel, LowResModel, coarse_size
from synergyseg.services.morphology import largest_component
from synergyseg.services.volume_io import (
    load_volume,
    normalize_intensity,
    resample_to_shape,
    save_mask,
    save_volume,
)

logger = logging.getLogger(__name__)

SIGMA_SCALE = 1.0 / 8
DEFAULT_OVERLAP = 0.5
DEFAULT_THRESHOLD = 0.5


def pad_to_patch(array: np.ndarray, patch: Sequence[int], mode: str = "reflect") -> np.ndarray:
    """Pad each axis symmetrically up to the patch extent; axes of extent 1 repeat their edge."""
    widths = []
    for extent, size in zip(array.shape, patch):
        missing = max(0, size - extent)
        widths.append((missing // 2, missing - missing // 2))
    if not any(before or after for before, after in widths):
        return array
    padded = array
    for axis, width in enumerate(widths):
        if width == (0, 0):
            continue
        axis_widths = [(0, 0)] * array.ndim
        axis_widths[axis] = width
        axis_mode = mode if padded.shape[axis] > 1 else "edge"
        padded = np.pad(padded, axis_widths, mode=axis_mode)  # type: ignore[call-overload]
    return padded


def tile_starts(extent: int, patch: int, overlap: float = DEFAULT_OVERLAP) -> list[int]:
    """Evenly spread tile origins whose spacing does not exceed ``patch * (1 - overlap)``."""
    if extent <= patch:
        return [0]
    target_step = max(1.0, patch * (1.0 - overlap))
    n_steps = math.ceil((extent - patch) / target_step) + 1
    actual_step = (extent - patch) / (n_steps - 1)
    return [int(round(actual_step * i)) for i in range(n_steps)]


def gaussian_importance_map(patch: Sequence[int], sigma_scale: float = SIGMA_SCALE) -> np.ndarray:
    """Patch-sized weights peaking at the centre, sigma = patch * sigma_scale per axis."""
    impulse = np.zeros(tuple(patch), dtype=np.float64)
    impulse[tuple(p // 2 for p in patch)] = 1.0
    weights = gaussian_filter(
        impulse, sigma=[p * sigma_scale for p in patch], mode="constant", cval=0.0
    )
    weights /= weights.max()
    # keep every voxel strictly positive so no division by zero after blending
    weights[weights == 0] = weights[weights > 0].min()
    return weights.astype(np.float32)


def _tile_origins(shape: Sequence[int], patch: Sequence[int], overlap: float) -> list[tuple[int, ...]]:
    return list(product(*(tile_starts(e, p, overlap) for e, p in zip(shape, patch))))


def blending_normalizer(
    shape: Sequence[int], patch: Sequence[int], overlap: float = DEFAULT_OVERLAP
) -> np.ndarray:
    """Sum of the tile weights covering every voxel of a (padded) volume."""
    weights = gaussian_importance_map(patch)
    total = np.zeros(tuple(shape), dtype=np.float32)
    for origin in _tile_origins(shape, patch, overlap):
        window = tuple(slice(o, o + p) for o, p in zip(origin, patch))
        total[window] += weights
    return total


def _logits(model: Any, x: torch.Tensor) -> torch.Tensor:
    out = model(x)
    return out.logits if hasattr(out, "logits") else out


def resize_array(array: np.ndarray, size: Sequence[int], mode: str = "trilinear") -> np.ndarray:
    """Resize a 3D grid to ``size`` with ``trilinear`` or ``nearest`` interpolation."""
    target = tuple(int(s) for s in size)
    if tuple(array.shape) == target:
        return array
    tensor = torch.from_numpy(np.ascontiguousarray(array, dtype=np.float32))[None, None]
    if mode == "nearest":
        out = F.interpolate(tensor, size=target, mode="nearest")
    else:
        out = F.interpolate(tensor, size=target, mode="trilinear", align_corners=False)
    return out[0, 0].numpy().astype(array.dtype, copy=False)


@torch.no_grad()
def _blend_tiles(
    channels: np.ndarray, net: nn.Module, patch: Sequence[int], overlap: float
) -> np.ndarray:
    """Gaussian-blended sigmoid of ``net`` over a (C, x, y, z) array, cropped to its grid."""
    shape = channels.shape[1:]
    padded = np.stack([pad_to_patch(c, patch) for c in channels])
    weights_t = torch.from_numpy(gaussian_importance_map(patch))
    numerator = torch.zeros(padded.shape[1:], dtype=torch.float32)
    denominator = torch.zeros(padded.shape[1:], dtype=torch.float32)

    device = next(net.parameters(), torch.empty(0)).device
    was_training = net.training
    net.eval()
    for origin in _tile_origins(padded.shape[1:], patch, overlap):
        window = tuple(slice(o, o + p) for o, p in zip(origin, patch))
        tile = np.ascontiguousarray(padded[(slice(None), *window)], dtype=np.float32)
        logits = _logits(net, torch.from_numpy(tile)[None].to(device))
        probs = torch.sigmoid(logits[0, 0].float()).cpu()
        numerator[window] += weights_t * probs
        denominator[window] += weights_t
    net.train(was_training)

    prob = (numerator / denominator).numpy()
    crop = tuple(
        slice((padded_extent - extent) // 2, (padded_extent - extent) // 2 + extent)
        for padded_extent, extent in zip(padded.shape[1:], shape)
    )
    return np.clip(prob[crop], 0.0, 1.0).astype(np.float32)


def lowres_probability(
    image: np.ndarray,
    net: nn.Module,
    lowres_scale: Sequence[int],
    plan: PlanConfig,
    overlap: float = DEFAULT_OVERLAP,
) -> np.ndarray:
    """Sliding-window probabilities of ``net`` on the downsampled volume, upsampled back.

    Tiles keep the plan's patch size on the coarse grid, so each one covers
    ``lowres_scale`` times the extent of a full-resolution tile.
    """
    coarse = resize_array(image.astype(np.float32), coarse_size(image.shape, lowres_scale))
    prob = _blend_tiles(coarse[None], net, plan.patch_size, overlap)
    return np.clip(resize_array(prob, image.shape), 0.0, 1.0)


def sliding_window_predict(
    volume: Union[Volume, np.ndarray],
    model: nn.Module,
    plan: PlanConfig,
    overlap: float = DEFAULT_OVERLAP,
    prior: Optional[np.ndarray] = None,
) -> np.ndarray:
    """Foreground probabilities for a normalized volume, same shape as the input.

    A cascade first predicts the whole downsampled volume with its low-resolution
    network (or takes ``prior``), then tiles the refiner over image and prior.
    """
    data = volume.data if isinstance(volume, Volume) else np.asarray(volume, dtype=np.float32)
    if isinstance(model, LowResModel):
        return lowres_probability(data, model.net, model.lowres_scale, plan, overlap)
    if isinstance(model, CascadeModel):
        if prior is None:
            prior = lowres_probability(data, model.lowres_net, model.lowres_scale, plan, overlap)
        return _blend_tiles(np.stack([data, prior]), model.fullres_net, plan.patch_size, overlap)
    return _blend_tiles(data[None], model, plan.patch_size, overlap)


def postprocess(
    prob: Union[Volume, np.ndarray],
    threshold: float = DEFAULT_THRESHOLD,
    spacing: Sequence[float] = (1.0, 1.0, 1.0),
    origin: Sequence[float] = (0.0, 0.0, 0.0),
) -> LabelMask:
    """Threshold (strictly above) and keep the largest 6-connected component."""
    if isinstance(prob, Volume):
        spacing, origin = prob.spacing, prob.origin
        data = prob.data
    else:
        data = np.asarray(prob)
    return LabelMask(
        data=largest_component(data > threshold),
        spacing=tuple(spacing),
        origin=tuple(origin),
    )


def predict_volume(
    volume: Volume, model: nn.Module, plan: PlanConfig, threshold: float = DEFAULT_THRESHOLD
) -> tuple[Volume, LabelMask]:
    """Probability volume and postprocessed mask on the volume's native grid."""
    native_shape: Shape3 = volume.shape
    prepared = normalize_intensity(volume)
    if plan.resample_shape is not None:
        prepared = resample_to_shape(prepared, plan.resample_shape)
    prob = prepared.model_copy(update={"data": sliding_window_predict(prepared, model, plan)})
    if prob.shape != native_shape:
        prob = resample_to_shape(prob, native_shape)
        prob = prob.model_copy(
            update={"data": np.clip(prob.data, 0.0, 1.0), "spacing": volume.spacing}
        )
    return prob, postprocess(prob, threshold)


def predict_dataset(
    model: nn.Module,
    plan: PlanConfig,
    manifest: DatasetManifest,
    split: Union[str, Partition],
    out_dir: Union[str, Path],
    threshold: float = DEFAULT_THRESHOLD,
) -> list[str]:
    """Write ``<case_id>_prob.raw3d`` and ``<case_id>_mask.raw3d`` for every case of a split."""
    out_dir = Path(out_dir)
    partition = Partition(split)
    predicted = []
    for case_id in manifest.ids(partition):
        entry = manifest.case(case_id)
        volume = load_volume(manifest.resolve(entry.volume), modality_tag=entry.modality or "")
        prob, mask = predict_volume(volume, model, plan, threshold)
        save_volume(prob, out_dir / f"{case_id}_prob.raw3d")
        save_mask(mask, out_dir / f"{case_id}_mask.raw3d")
        if mask.foreground_voxels == 0:
            logger.warning(f"Empty prediction for case {case_id}")
        predicted.append(case_id)
        logger.debug(f"Predicted {case_id}: {mask.foreground_voxels} foreground voxels")
    logger.info(f"Predicted {len(predicted)} {partition.value} cases into {out_dir}")
    return predicted
