"""Volume and label-mask IO, resampling, normalisation, manifests and splits.

Two on-disk formats are supported:

- NIfTI-1 (``.nii`` / ``.nii.gz``) via nibabel; only dimensions, pixdim and the
  translation part of the affine are honoured.
- RAW3D (``.raw3d``): little-endian float32 voxels with x fastest and z slowest,
  plus a JSON sidecar ``<name>.raw3d.json`` holding ``shape``, ``spacing``,
  ``origin`` and ``kind`` (``"volume"`` or ``"mask"``).
"""

import json
import logging
import math
from collections.abc import Sequence
from pathlib import Path
from typing import Optional, TypeVar, Union

import nibabel as nib
import numpy as np
import torch
import torch.nn.functional as F
from nibabel.filebasedimages import ImageFileError
from pydantic import ValidationError

from synergyseg.errors import IOFailure, NonBinaryLabels, ShapeMismatch, TooFewCases, UnreadableFile
from synergyseg.models import DatasetManifest, LabelMask, Partition, Shape3, Vector3, Volume

logger = logging.getLogger(__name__)

RAW3D_SUFFIX = ".raw3d"
NIFTI_SUFFIXES = (".nii", ".nii.gz")

GridT = TypeVar("GridT", Volume, LabelMask)


def _sidecar_path(path: Path) -> Path:
    return path.with_name(path.name + ".json")


def _is_raw3d(path: Path) -> bool:
    return path.name.lower().endswith(RAW3D_SUFFIX)


def _is_nifti(path: Path) -> bool:
    return path.name.lower().endswith(NIFTI_SUFFIXES)


def _read_raw3d(path: Path) -> tuple[np.ndarray, Vector3, Vector3]:
    try:
        meta = json.loads(_sidecar_path(path).read_text(encoding="utf-8"))
        payload = path.read_bytes()
    except (OSError, json.JSONDecodeError) as e:
        raise UnreadableFile(f"{path}: {e}") from e

    try:
        shape = tuple(int(s) for s in meta["shape"])
        spacing = tuple(float(s) for s in meta["spacing"])
        origin = tuple(float(o) for o in meta.get("origin", (0.0, 0.0, 0.0)))
    except (KeyError, TypeError, ValueError) as e:
        raise UnreadableFile(f"{path}: malformed sidecar ({e})") from e

    if len(shape) != 3 or len(spacing) != 3 or len(origin) != 3:
        raise UnreadableFile(f"{path}: sidecar must describe a 3D grid")
    if len(payload) != 4 * math.prod(shape):
        raise UnreadableFile(
            f"{path}: expected {4 * math.prod(shape)} bytes for shape {shape}, found {len(payload)}"
        )

    flat = np.frombuffer(payload, dtype="<f4")
    data = flat.reshape(shape[::-1]).transpose(2, 1, 0).astype(np.float32)
    return np.ascontiguousarray(data), spacing, origin  # type: ignore[return-value]


def _write_raw3d(path: Path, data: np.ndarray, spacing: Vector3, origin: Vector3, kind: str) -> None:
    payload = np.ascontiguousarray(np.asarray(data, dtype="<f4").transpose(2, 1, 0)).tobytes()
    sidecar = {
        "shape": [int(s) for s in data.shape],
        "spacing": [float(s) for s in spacing],
        "origin": [float(o) for o in origin],
        "kind": kind,
    }
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_bytes(payload)
        _sidecar_path(path).write_text(json.dumps(sidecar, indent=2), encoding="utf-8")
    except OSError as e:
        raise IOFailure(f"Failed to write {path}: {e}") from e


def _read_nifti(path: Path) -> tuple[np.ndarray, Vector3, Vector3]:
    try:
        image = nib.load(str(path))
        data = np.asarray(image.get_fdata(dtype=np.float32))
        zooms = image.header.get_zooms()
        affine = image.affine
    except (OSError, ImageFileError, ValueError) as e:
        raise UnreadableFile(f"{path}: {e}") from e

    if data.ndim == 4 and data.shape[3] == 1:
        data = data[..., 0]
    if data.ndim != 3:
        raise UnreadableFile(f"{path}: expected a 3D image, found shape {data.shape}")
    spacing = tuple(float(z) for z in zooms[:3])
    origin = tuple(float(o) for o in affine[:3, 3])
    return np.ascontiguousarray(data), spacing, origin  # type: ignore[return-value]


def _write_nifti(path: Path, data: np.ndarray, spacing: Vector3, origin: Vector3) -> None:
    affine = np.diag([*spacing, 1.0])
    affine[:3, 3] = origin
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        nib.save(nib.Nifti1Image(data, affine), str(path))
    except OSError as e:
        raise IOFailure(f"Failed to write {path}: {e}") from e


def _read_grid(path: Union[str, Path]) -> tuple[np.ndarray, Vector3, Vector3]:
    path = Path(path)
    if not path.exists():
        raise UnreadableFile(f"{path}: no such file")
    if _is_raw3d(path):
        return _read_raw3d(path)
    if _is_nifti(path):
        return _read_nifti(path)
    raise UnreadableFile(f"{path}: unsupported format (expected .raw3d, .nii or .nii.gz)")


def load_volume(path: Union[str, Path], modality_tag: str = "") -> Volume:
    """Read one intensity volume; non-finite data is rejected."""
    data, spacing, origin = _read_grid(path)
    if not np.isfinite(data).all():
        raise UnreadableFile(f"{path}: volume contains NaN or Inf")
    try:
        volume = Volume(data=data, spacing=spacing, origin=origin, modality_tag=modality_tag)
    except ValidationError as e:
        raise UnreadableFile(f"{path}: {e}") from e
    logger.debug(f"Loaded volume {path} shape={volume.shape} spacing={volume.spacing}")
    return volume


def load_mask(path: Union[str, Path], binarize: bool = False) -> LabelMask:
    """Read one label mask.

    With ``binarize`` values > 0.5 become 1 and everything else 0; otherwise any
    value outside {0, 1} raises NonBinaryLabels.
    """
    data, spacing, origin = _read_grid(path)
    if binarize:
        data = (data > 0.5).astype(np.uint8)
    elif not np.all((data == 0) | (data == 1)):
        found = np.unique(data[(data != 0) & (data != 1)])[:5]
        raise NonBinaryLabels(f"{path}: label values outside {{0, 1}}: {found.tolist()}")
    try:
        return LabelMask(data=data.astype(np.uint8), spacing=spacing, origin=origin)
    except ValidationError as e:
        raise UnreadableFile(f"{path}: {e}") from e


def check_alignment(volume: Volume, mask: LabelMask) -> None:
    """Raise ShapeMismatch unless mask and volume share shape and spacing."""
    if mask.shape != volume.shape:
        raise ShapeMismatch(f"mask shape {mask.shape} != volume shape {volume.shape}")
    if not np.allclose(mask.spacing, volume.spacing, rtol=1e-5, atol=0.0):
        raise ShapeMismatch(f"mask spacing {mask.spacing} != volume spacing {volume.spacing}")


def load_case(
    volume_path: Union[str, Path],
    mask_path: Optional[Union[str, Path]] = None,
    binarize: bool = False,
    modality_tag: str = "",
) -> tuple[Volume, Optional[LabelMask]]:
    """Load a volume and, if given, its aligned mask."""
    volume = load_volume(volume_path, modality_tag=modality_tag)
    if mask_path is None:
        return volume, None
    mask = load_mask(mask_path, binarize=binarize)
    check_alignment(volume, mask)
    return volume, mask


def save_volume(volume: Volume, path: Union[str, Path]) -> None:
    path = Path(path)
    if _is_raw3d(path):
        _write_raw3d(path, volume.data, volume.spacing, volume.origin, kind="volume")
    elif _is_nifti(path):
        _write_nifti(path, volume.data.astype(np.float32), volume.spacing, volume.origin)
    else:
        raise IOFailure(f"{path}: unsupported format (expected .raw3d, .nii or .nii.gz)")


def save_mask(mask: LabelMask, path: Union[str, Path]) -> None:
    path = Path(path)
    if _is_raw3d(path):
        _write_raw3d(path, mask.data.astype(np.float32), mask.spacing, mask.origin, kind="mask")
    elif _is_nifti(path):
        _write_nifti(path, mask.data.astype(np.uint8), mask.spacing, mask.origin)
    else:
        raise IOFailure(f"{path}: unsupported format (expected .raw3d, .nii or .nii.gz)")


def save_case(
    volume: Volume,
    volume_path: Union[str, Path],
    mask: Optional[LabelMask] = None,
    mask_path: Optional[Union[str, Path]] = None,
) -> None:
    """Write a volume and optionally its mask; the format follows each suffix."""
    save_volume(volume, volume_path)
    if mask is not None:
        if mask_path is None:
            raise ValueError("mask_path is required when a mask is given")
        save_mask(mask, mask_path)


def resample_to_shape(grid: GridT, target_shape: Sequence[int]) -> GridT:
    """Resample to ``target_shape`` keeping the physical extent.

    Volumes use trilinear interpolation, masks nearest neighbour so the label
    set never grows.
    """
    target = tuple(int(t) for t in target_shape)
    if len(target) != 3 or min(target) < 1:
        raise ValueError(f"target_shape must be three positive integers, got {target_shape}")

    spacing = tuple(s * old / new for s, old, new in zip(grid.spacing, grid.shape, target))
    if target == grid.shape:
        return grid.model_copy(update={"data": grid.data.copy()})

    tensor = torch.from_numpy(np.ascontiguousarray(grid.data, dtype=np.float32))[None, None]
    if isinstance(grid, LabelMask):
        out = F.interpolate(tensor, size=target, mode="nearest")[0, 0].numpy().astype(np.uint8)
    else:
        out = F.interpolate(tensor, size=target, mode="trilinear", align_corners=False)[0, 0].numpy()
    return grid.model_copy(update={"data": np.ascontiguousarray(out), "spacing": spacing})


def normalize_intensity(volume: Volume) -> Volume:
    """Per-volume z-score; constant volumes map to all zeros."""
    data = volume.data.astype(np.float64)
    mean = data.mean()
    std = data.std()
    if std < 1e-12:
        normalized = np.zeros_like(data)
    else:
        normalized = (data - mean) / std
    return volume.model_copy(update={"data": normalized.astype(np.float32)})


def _round_half_up(value: float) -> int:
    return int(math.floor(value + 0.5))


def make_split(
    case_ids: Sequence[str],
    ratios: tuple[float, float, float] = (0.8, 0.1, 0.1),
    seed: int = 0,
) -> dict[str, Partition]:
    """Deterministic train/val/test assignment.

    Validation and test sizes are the half-up rounded ratio counts (at least one
    case each when their ratio is positive); the remainder goes to training.
    """
    ids = sorted(case_ids)
    if len(ids) < 3:
        raise TooFewCases(f"need at least 3 cases to split, got {len(ids)}")
    if len(set(ids)) != len(ids):
        raise ValueError("case ids must be unique")
    if len(ratios) != 3 or any(r < 0 for r in ratios) or sum(ratios) <= 0:
        raise ValueError(f"ratios must be three nonnegative numbers with positive sum, got {ratios}")

    total = float(sum(ratios))
    n = len(ids)
    sizes = []
    for ratio in ratios[1:]:
        size = _round_half_up(n * ratio / total)
        sizes.append(max(1, size) if ratio > 0 else 0)
    n_val, n_test = sizes
    n_train = n - n_val - n_test
    if n_train < 0:
        raise TooFewCases(f"{n} cases cannot hold {n_val} validation and {n_test} test cases")

    order = np.random.default_rng(seed).permutation(n)
    shuffled = [ids[i] for i in order]
    split: dict[str, Partition] = {}
    for i, case_id in enumerate(shuffled):
        if i < n_train:
            split[case_id] = Partition.TRAIN
        elif i < n_train + n_val:
            split[case_id] = Partition.VAL
        else:
            split[case_id] = Partition.TEST
    return split


def load_manifest(path: Union[str, Path]) -> DatasetManifest:
    """Read a manifest; case paths resolve against its directory."""
    path = Path(path)
    try:
        manifest = DatasetManifest.model_validate_json(path.read_text(encoding="utf-8"))
    except OSError as e:
        raise UnreadableFile(f"{path}: {e}") from e
    except ValidationError as e:
        raise UnreadableFile(f"{path}: invalid manifest: {e}") from e
    return manifest.with_base_dir(path.parent)


def save_manifest(manifest: DatasetManifest, path: Union[str, Path]) -> None:
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(manifest.model_dump_json(indent=2, exclude_none=True), encoding="utf-8")
    except OSError as e:
        raise IOFailure(f"Failed to write {path}: {e}") from e
    manifest.with_base_dir(path.parent)


def load_partition(
    manifest: DatasetManifest,
    partition: Partition,
    require_masks: bool = True,
    binarize: bool = False,
) -> list[tuple[str, Volume, Optional[LabelMask]]]:
    """Load every case of one partition in manifest order."""
    cases = []
    for case_id in manifest.ids(partition):
        entry = manifest.case(case_id)
        if entry.mask is None and require_masks:
            logger.warning(f"Skipping case {case_id}: no mask in manifest")
            continue
        mask_path = manifest.resolve(entry.mask) if entry.mask else None
        volume, mask = load_case(
            manifest.resolve(entry.volume),
            mask_path,
            binarize=binarize,
            modality_tag=entry.modality or "",
        )
        cases.append((case_id, volume, mask))
    return cases


def case_resample_policy(
    volume: Volume, mask: Optional[LabelMask], resample_shape: Optional[Shape3]
) -> tuple[Volume, Optional[LabelMask]]:
    """Apply the optional resize policy to a case."""
    if resample_shape is None:
        return volume, mask
    volume = resample_to_shape(volume, resample_shape)
    if mask is not None:
        mask = resample_to_shape(mask, resample_shape)
    return volume, mask
