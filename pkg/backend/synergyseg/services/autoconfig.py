"""Dataset fingerprinting and rule-based plan generation.

The planner is deterministic. Its rules:

- pooling: per stage, pool an axis iff its current extent is >= 8 and >= half
  the largest extent; stop when every axis is <= 8 or six stages exist. A
  patch the rule would leave with a single stage gets one pooling step on
  every axis of extent >= 4.
- channels: ``16 * 2**stage`` capped at 256.
- batch: 4, then 2, then 1 at the full median-shape patch; after that the patch
  shrinks (longest axis halved, floor 8, ties x before y before z) at batch 1.
- variant: cascade3d when the fitted patch covers < 25% of the median shape,
  with a low-resolution factor of 2 on every axis longer than 64 voxels.
"""

import logging
import math
from typing import Optional

import numpy as np

from synergyseg.config import Settings, get_settings
from synergyseg.errors import BudgetInfeasible, NoForegroundVoxels, NoTrainingCases
from synergyseg.models import (
    DatasetFingerprint,
    DatasetManifest,
    MemoryBudget,
    Partition,
    PlanConfig,
    Shape3,
    Variant,
)
from synergyseg.services.volume_io import case_resample_policy, load_partition

logger = logging.getLogger(__name__)

MIN_PATCH_EXTENT = 8
MAX_STAGES = 6
BASE_CHANNELS = 16
MAX_CHANNELS = 256
BATCH_CANDIDATES = (4, 2, 1)
CASCADE_COVERAGE = 0.25
LOWRES_TRIGGER_EXTENT = 64
BYTES_PER_VALUE = 4
# forward activations, their gradients and the optimizer states
MEMORY_OVERHEAD = 6

DEFAULT_PATCH = (128, 128, 64)
DEFAULT_BATCH = 2
DEFAULT_STAGES = 5
DEFAULT_CODEBOOK_SIZE = 256
DEFAULT_LATENT_DIM = 64
DEFAULT_HEADS = 4


def _median_int(values: list[int]) -> int:
    return int(math.floor(float(np.median(values)) + 0.5))


def fingerprint_dataset(
    manifest: DatasetManifest, resample_shape: Optional[Shape3] = None
) -> DatasetFingerprint:
    """Corpus statistics over the annotated training cases.

    Shapes and spacings are taken after the optional resize policy; intensity
    statistics cover foreground voxels only.
    """
    cases = load_partition(manifest, Partition.TRAIN, require_masks=True)
    if not cases:
        raise NoTrainingCases("manifest has no training case with a mask")

    shapes: list[Shape3] = []
    spacings: list[tuple[float, float, float]] = []
    foreground_values: list[np.ndarray] = []
    modalities: set[str] = set()
    n_foreground = 0
    n_voxels = 0
    for case_id, volume, mask in cases:
        assert mask is not None
        volume, mask = case_resample_policy(volume, mask, resample_shape)
        assert mask is not None
        shapes.append(volume.shape)
        spacings.append(volume.spacing)
        selected = mask.data.astype(bool)
        foreground_values.append(volume.data[selected].astype(np.float64))
        n_foreground += int(selected.sum())
        n_voxels += selected.size
        if volume.modality_tag:
            modalities.add(volume.modality_tag)
        logger.debug(f"Fingerprinted {case_id}: shape={volume.shape}")

    if n_foreground == 0:
        raise NoForegroundVoxels("training masks contain no foreground voxels")

    values = np.concatenate(foreground_values)
    fingerprint = DatasetFingerprint(
        median_shape=tuple(_median_int([s[axis] for s in shapes]) for axis in range(3)),
        median_spacing=tuple(float(np.median([s[axis] for s in spacings])) for axis in range(3)),
        intensity_p0_5=float(np.percentile(values, 0.5)),
        intensity_p99_5=float(np.percentile(values, 99.5)),
        intensity_mean=float(values.mean()),
        intensity_std=float(values.std()),
        foreground_fraction=n_foreground / n_voxels,
        n_cases=len(cases),
        resample_shape=resample_shape,
        modalities=sorted(modalities),
    )
    logger.info(
        f"Fingerprint over {fingerprint.n_cases} cases: median_shape={fingerprint.median_shape} "
        f"foreground_fraction={fingerprint.foreground_fraction:.3f}"
    )
    return fingerprint


def pooling_schedule(patch: Shape3) -> list[tuple[int, int, int]]:
    """Binary per-axis pooling vectors, one per stage transition."""
    extents = [float(e) for e in patch]
    schedule: list[tuple[int, int, int]] = []
    while len(schedule) + 1 < MAX_STAGES and not all(e <= MIN_PATCH_EXTENT for e in extents):
        largest = max(extents)
        vector = tuple(int(e >= MIN_PATCH_EXTENT and e >= largest / 2) for e in extents)
        schedule.append(vector)  # type: ignore[arg-type]
        extents = [e / 2 if p else e for e, p in zip(extents, vector)]
    if not schedule:
        vector = tuple(int(e >= 4) for e in extents)
        if any(vector):
            schedule.append(vector)  # type: ignore[arg-type]
    return schedule


def _divisible_patch(patch: Shape3, schedule: list[tuple[int, int, int]]) -> Shape3:
    factors = [2 ** sum(v[axis] for v in schedule) for axis in range(3)]
    return tuple(max(f, (e // f) * f) for e, f in zip(patch, factors))  # type: ignore[return-value]


def _lowres_fit(
    patch: Shape3, schedule: list[tuple[int, int, int]], lowres_scale: tuple[int, int, int]
) -> tuple[Shape3, tuple[int, int, int]]:
    """Floor the patch so the downsampled patch keeps the pooling divisibility.

    An axis too short to be scaled keeps factor 1 rather than growing the patch.
    """
    factors = [2 ** sum(v[axis] for v in schedule) for axis in range(3)]
    fitted: list[int] = []
    scales: list[int] = []
    for extent, factor, scale in zip(patch, factors, lowres_scale):
        unit = factor * scale
        if extent < unit:
            unit, scale = factor, 1
        fitted.append((extent // unit) * unit)
        scales.append(scale)
    return tuple(fitted), tuple(scales)  # type: ignore[return-value]


def stage_channels(n_stages: int) -> list[int]:
    return [min(BASE_CHANNELS * 2**stage, MAX_CHANNELS) for stage in range(n_stages)]


def build_plan(
    patch_size: Shape3,
    batch_size: int,
    variant: Variant = Variant.FULLRES,
    lowres_scale: tuple[int, int, int] = (1, 1, 1),
    settings: Optional[Settings] = None,
) -> PlanConfig:
    """Plan for a given patch and batch using the pooling and channel rules."""
    settings = settings or get_settings()
    schedule = pooling_schedule(patch_size)
    n_stages = len(schedule) + 1
    patch = _divisible_patch(patch_size, schedule)
    if variant == Variant.FULLRES:
        lowres_scale = (1, 1, 1)
    else:
        patch, lowres_scale = _lowres_fit(patch, schedule, lowres_scale)
    return PlanConfig(
        variant=variant,
        patch_size=patch,
        batch_size=batch_size,
        n_stages=n_stages,
        channels_per_stage=stage_channels(n_stages),
        pooling_per_axis_per_stage=schedule,
        lowres_scale=lowres_scale,
        codebook_size=settings.CODEBOOK_SIZE,
        latent_dim=settings.LATENT_DIM,
        attention_heads=settings.ATTENTION_HEADS,
        commitment_beta=settings.COMMITMENT_BETA,
        codebook_decay=settings.CODEBOOK_DECAY,
    )


def estimate_memory(plan: PlanConfig) -> int:
    """4 bytes x batch x sum over stages of (voxels x channels) x overhead 6."""
    activations = sum(
        math.prod(shape) * channels
        for shape, channels in zip(plan.stage_shapes(), plan.channels_per_stage)
    )
    return BYTES_PER_VALUE * plan.batch_size * activations * MEMORY_OVERHEAD


def shrink_patch(patch: Shape3) -> Optional[Shape3]:
    """Halve the longest axis (floor 8, ties x before y before z); None when nothing can shrink."""
    if all(e <= MIN_PATCH_EXTENT for e in patch):
        return None
    axis = max(range(3), key=lambda a: (patch[a], -a))
    shrunk = list(patch)
    shrunk[axis] = max(MIN_PATCH_EXTENT, patch[axis] // 2)
    return tuple(shrunk)  # type: ignore[return-value]


def lowres_scale_for(median_shape: Shape3) -> tuple[int, int, int]:
    return tuple(2 if e > LOWRES_TRIGGER_EXTENT else 1 for e in median_shape)  # type: ignore[return-value]


def plan_configuration(
    fingerprint: DatasetFingerprint,
    budget: MemoryBudget,
    variant: Optional[Variant] = None,
    settings: Optional[Settings] = None,
) -> PlanConfig:
    """Fit patch and batch to the budget, then choose the configuration variant."""
    settings = settings or get_settings()
    usable = budget.usable_bytes
    patch: Optional[Shape3] = tuple(fingerprint.median_shape)  # type: ignore[assignment]

    plan: Optional[PlanConfig] = None
    for batch_size in BATCH_CANDIDATES:
        candidate = build_plan(patch, batch_size, settings=settings)  # type: ignore[arg-type]
        if estimate_memory(candidate) <= usable:
            plan = candidate
            break

    while plan is None:
        patch = shrink_patch(patch)  # type: ignore[arg-type]
        if patch is None:
            raise BudgetInfeasible(
                f"even the smallest plan exceeds the budget of {usable:.0f} usable bytes"
            )
        candidate = build_plan(patch, 1, settings=settings)
        if estimate_memory(candidate) <= usable:
            plan = candidate

    coverage = plan.patch_voxels / math.prod(fingerprint.median_shape)
    chosen = variant or (Variant.CASCADE if coverage < CASCADE_COVERAGE else Variant.FULLRES)
    if chosen != Variant.FULLRES:
        plan = build_plan(
            patch,  # type: ignore[arg-type]
            plan.batch_size,
            variant=chosen,
            lowres_scale=lowres_scale_for(fingerprint.median_shape),
            settings=settings,
        )

    logger.info(
        f"Planned {plan.variant.value}: patch={plan.patch_size} batch={plan.batch_size} "
        f"stages={plan.n_stages} coverage={coverage:.2f} memory={estimate_memory(plan)} bytes"
    )
    return plan


def default_plan(fingerprint: DatasetFingerprint) -> PlanConfig:
    """Fixed configuration used without auto-configuration.

    Only ``median_shape`` is read: it clips the (128, 128, 64) patch. Every one
    of the four stage transitions pools each axis whose extent is still >= 4.
    """
    patch = tuple(min(d, m) for d, m in zip(DEFAULT_PATCH, fingerprint.median_shape))
    extents = [float(e) for e in patch]
    schedule: list[tuple[int, int, int]] = []
    for _ in range(DEFAULT_STAGES - 1):
        vector = tuple(int(e >= 4) for e in extents)
        schedule.append(vector)  # type: ignore[arg-type]
        extents = [e / 2 if p else e for e, p in zip(extents, vector)]

    return PlanConfig(
        variant=Variant.FULLRES,
        patch_size=_divisible_patch(patch, schedule),  # type: ignore[arg-type]
        batch_size=DEFAULT_BATCH,
        n_stages=DEFAULT_STAGES,
        channels_per_stage=stage_channels(DEFAULT_STAGES),
        pooling_per_axis_per_stage=schedule,
        codebook_size=DEFAULT_CODEBOOK_SIZE,
        latent_dim=DEFAULT_LATENT_DIM,
        attention_heads=DEFAULT_HEADS,
    )


def attach_resample_policy(plan: PlanConfig, fingerprint: DatasetFingerprint) -> PlanConfig:
    """Carry the fingerprint's resize policy into the plan used for training and prediction."""
    return plan.model_copy(update={"resample_shape": fingerprint.resample_shape})
