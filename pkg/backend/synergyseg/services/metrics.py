"""Overlap and surface-distance metrics, per case and over a dataset split.

Conventions:

- both masks empty: dice, iou, precision and recall are all 1.
- a zero denominator with a nonempty counterpart gives 0.
- boundary voxels are foreground voxels with a background 6-neighbour, the
  volume edge counting as background.
- HD95 is the linearly interpolated 95th percentile of both directed distance
  sets taken together; ASSD is their joint mean.
"""

import logging
from collections.abc import Sequence
from pathlib import Path
from typing import Optional, Union

import numpy as np
from scipy.spatial import cKDTree

from synergyseg.errors import (
    EmptySurface,
    MissingPrediction,
    NoEvaluableCases,
    ShapeMismatch,
)
from synergyseg.models import (
    AggregateMetrics,
    CaseMetrics,
    ConfusionCounts,
    DatasetManifest,
    LabelMask,
    MetricsReport,
    Partition,
    SurfaceDistanceSet,
)
from synergyseg.services.morphology import boundary_voxels
from synergyseg.services.volume_io import load_mask

logger = logging.getLogger(__name__)

MaskLike = Union[LabelMask, np.ndarray]
PREDICTION_SUFFIXES = (".raw3d", ".nii.gz", ".nii")


def _as_bool(mask: MaskLike) -> np.ndarray:
    data = mask.data if isinstance(mask, LabelMask) else np.asarray(mask)
    return data.astype(bool)


def confusion_counts(pred: MaskLike, gt: MaskLike) -> ConfusionCounts:
    p, g = _as_bool(pred), _as_bool(gt)
    if p.shape != g.shape:
        raise ShapeMismatch(f"prediction shape {p.shape} != ground truth shape {g.shape}")
    tp = int(np.count_nonzero(p & g))
    fp = int(np.count_nonzero(p & ~g))
    fn = int(np.count_nonzero(~p & g))
    return ConfusionCounts(tp=tp, fp=fp, fn=fn, tn=p.size - tp - fp - fn)


def _ratio(numerator: int, denominator: int) -> float:
    return numerator / denominator if denominator else 0.0


def overlap_metrics(pred: MaskLike, gt: MaskLike) -> dict[str, float]:
    """Dice, IoU, precision and recall of a binary prediction."""
    c = confusion_counts(pred, gt)
    if c.tp + c.fp + c.fn == 0:
        return {"dice": 1.0, "iou": 1.0, "precision": 1.0, "recall": 1.0}
    return {
        "dice": _ratio(2 * c.tp, 2 * c.tp + c.fp + c.fn),
        "iou": _ratio(c.tp, c.tp + c.fp + c.fn),
        "precision": _ratio(c.tp, c.tp + c.fp),
        "recall": _ratio(c.tp, c.tp + c.fn),
    }


def dice_score(pred: MaskLike, gt: MaskLike) -> float:
    return overlap_metrics(pred, gt)["dice"]


def surface_distances(
    pred: MaskLike, gt: MaskLike, spacing: Optional[Sequence[float]] = None
) -> SurfaceDistanceSet:
    """Directed distances (mm) from each boundary voxel to the other mask's boundary."""
    p, g = _as_bool(pred), _as_bool(gt)
    if p.shape != g.shape:
        raise ShapeMismatch(f"prediction shape {p.shape} != ground truth shape {g.shape}")
    if not p.any() or not g.any():
        raise EmptySurface("surface distances need two nonempty masks")
    if spacing is None:
        spacing = gt.spacing if isinstance(gt, LabelMask) else (1.0, 1.0, 1.0)
    scale = np.asarray(spacing, dtype=np.float64)

    pred_points = np.argwhere(boundary_voxels(p)) * scale
    gt_points = np.argwhere(boundary_voxels(g)) * scale
    d_pred_to_gt, _ = cKDTree(gt_points).query(pred_points, k=1)
    d_gt_to_pred, _ = cKDTree(pred_points).query(gt_points, k=1)
    return SurfaceDistanceSet(d_pred_to_gt=d_pred_to_gt, d_gt_to_pred=d_gt_to_pred)


def _check_nonempty(sd: SurfaceDistanceSet) -> None:
    if sd.d_pred_to_gt.size == 0 or sd.d_gt_to_pred.size == 0:
        raise EmptySurface("distance set has an empty direction")


def hd95(sd: SurfaceDistanceSet) -> float:
    _check_nonempty(sd)
    return float(np.percentile(sd.combined(), 95))


def assd(sd: SurfaceDistanceSet) -> float:
    _check_nonempty(sd)
    return float(sd.combined().mean())


def evaluate_case(
    pred: MaskLike, gt: MaskLike, spacing: Optional[Sequence[float]] = None
) -> CaseMetrics:
    """All six metrics; distances stay null when either surface is empty."""
    overlap = overlap_metrics(pred, gt)
    try:
        sd = surface_distances(pred, gt, spacing)
    except EmptySurface:
        return CaseMetrics(**overlap)
    return CaseMetrics(**overlap, hd95_mm=hd95(sd), assd_mm=assd(sd))


def aggregate(per_case: dict[str, CaseMetrics]) -> AggregateMetrics:
    """Unweighted means; distance means cover cases with defined distances only."""
    if not per_case:
        raise NoEvaluableCases("cannot aggregate zero cases")
    cases = list(per_case.values())
    distances = [c for c in cases if c.hd95_mm is not None and c.assd_mm is not None]
    return AggregateMetrics(
        dice=float(np.mean([c.dice for c in cases])),
        iou=float(np.mean([c.iou for c in cases])),
        precision=float(np.mean([c.precision for c in cases])),
        recall=float(np.mean([c.recall for c in cases])),
        hd95_mm=float(np.mean([c.hd95_mm for c in distances])) if distances else None,
        assd_mm=float(np.mean([c.assd_mm for c in distances])) if distances else None,
    )


def find_prediction(pred_dir: Path, case_id: str) -> Path:
    for suffix in PREDICTION_SUFFIXES:
        candidate = pred_dir / f"{case_id}_mask{suffix}"
        if candidate.is_file():
            return candidate
    raise MissingPrediction(f"no prediction for case {case_id} in {pred_dir}")


def evaluate_dataset(
    pred_dir: Union[str, Path],
    manifest: DatasetManifest,
    split: Union[str, Partition] = Partition.TEST,
    label: str = "",
) -> MetricsReport:
    """Evaluate ``<case_id>_mask.*`` predictions against the manifest's masks."""
    pred_dir = Path(pred_dir)
    partition = Partition(split)
    per_case: dict[str, CaseMetrics] = {}
    excluded: list[str] = []
    for case_id in manifest.ids(partition):
        entry = manifest.case(case_id)
        if entry.mask is None:
            logger.warning(f"Case {case_id} has no ground truth; not evaluated")
            continue
        gt = load_mask(manifest.resolve(entry.mask))
        pred = load_mask(find_prediction(pred_dir, case_id), binarize=True)
        metrics = evaluate_case(pred, gt, gt.spacing)
        if metrics.hd95_mm is None:
            logger.warning(f"Case {case_id}: empty surface, distances excluded from the means")
            excluded.append(case_id)
        per_case[case_id] = metrics
        logger.debug(f"Evaluated {case_id}: dice={metrics.dice:.4f}")

    if not per_case:
        raise NoEvaluableCases(f"split {partition.value} has no annotated case")
    report = MetricsReport(
        label=label,
        split=partition.value,
        per_case=per_case,
        aggregate=aggregate(per_case),
        n_cases=len(per_case),
        excluded_cases=excluded,
    )
    logger.info(
        f"Evaluated {report.n_cases} {partition.value} cases: dice={report.aggregate.dice:.4f}"
    )
    return report
