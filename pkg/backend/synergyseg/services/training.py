"""Objective, learning-rate schedule, patch sampling and the training loop.

One orchestrator owns the parameters. Each epoch runs ``steps_per_epoch``
optimizer steps on sampled patches, updates the codebook, re-seeds dead codes
and scores the validation split with hard Dice on sliding-window predictions.
Training stops once the epochs without improvement exceed ``patience``; the
best weights are restored before the checkpoint is written.

Low-resolution networks train on volumes downsampled by the plan's
``lowres_scale``, with patches of the plan's size, so each patch sees a wider
field of view. A cascade trains that network first, predicts every case with
it over the whole downsampled volume, and trains the full-resolution refiner on
image patches paired with the matching crop of that prior.
"""

import copy
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import IO, Any, NamedTuple, Optional, Union

import numpy as np
import torch
import torch.nn.functional as F
from torch import Tensor, nn

from synergyseg.config import Settings, get_settings
from synergyseg.errors import NoTrainingCases, NonFiniteLoss, ShapeMismatch
from synergyseg.models import (
    DatasetManifest,
    EpochRecord,
    LossWeights,
    Partition,
    PlanConfig,
    Schedule,
    Shape3,
    TrainConfig,
)
from synergyseg.network import (
    CHECKPOINT_NAME,
    CascadeModel,
    LowResModel,
    SegmentationModel,
    SegmentationOutput,
    build_model,
    coarse_size,
    codebook_update,
    reseed_dead_codes,
    save_checkpoint,
)
from synergyseg.services.inference import (
    lowres_probability,
    pad_to_patch,
    resize_array,
    sliding_window_predict,
)
from synergyseg.services.metrics import dice_score
from synergyseg.services.volume_io import case_resample_policy, load_partition, normalize_intensity

logger = logging.getLogger(__name__)

DICE_EPS = 1e-5
VALIDATION_THRESHOLD = 0.5
TRAIN_LOG_NAME = "train_log.jsonl"


def segmentation_terms(logits: Tensor, target: Tensor, eps: float = DICE_EPS) -> tuple[Tensor, Tensor]:
    """Mean binary cross-entropy and soft-Dice loss over the whole batch."""
    if logits.shape != target.shape:
        raise ShapeMismatch(f"logits {tuple(logits.shape)} and target {tuple(target.shape)} differ")
    target = target.to(logits.dtype)
    bce = F.binary_cross_entropy_with_logits(logits, target)
    probs = torch.sigmoid(logits)
    dice = 1.0 - (2.0 * (probs * target).sum() + eps) / (probs.sum() + target.sum() + eps)
    return bce, dice


def bce_dice_loss(logits: Tensor, target: Tensor, eps: float = DICE_EPS) -> Tensor:
    bce, dice = segmentation_terms(logits, target, eps)
    return bce + dice


def objective(
    out: SegmentationOutput, target: Tensor, weights: LossWeights
) -> tuple[Tensor, dict[str, float]]:
    """Weighted sum of the positive-weight terms; no such term gives a constant zero."""
    bce, dice = segmentation_terms(out.logits, target)
    terms = {"bce": bce, "dice": dice, "vq": out.vq_loss, "commit": out.commit_loss}
    total: Optional[Tensor] = None
    for name, term in terms.items():
        weight = getattr(weights, name)
        if weight > 0:
            weighted = weight * term
            total = weighted if total is None else total + weighted
    if total is None:
        total = torch.zeros((), dtype=out.logits.dtype, device=out.logits.device)
    return total, {name: float(term.detach()) for name, term in terms.items()}


def lr_schedule(epoch: int, cfg: TrainConfig) -> float:
    """Cosine annealing from ``lr_init`` to ``lr_min``, or the stepwise decay alternative."""
    if cfg.schedule == Schedule.STEP:
        return cfg.lr_init * (1.0 - cfg.step_decay) ** (epoch // cfg.step_every)
    progress = min(max(epoch, 0), cfg.max_epochs) / cfg.max_epochs
    return cfg.lr_min + (cfg.lr_init - cfg.lr_min) * (1.0 + math.cos(math.pi * progress)) / 2.0


class PatchBatch(NamedTuple):
    images: np.ndarray
    masks: np.ndarray
    foreground_centered: list[bool]


def sample_patch_starts(
    mask: np.ndarray,
    patch: Shape3,
    n: int,
    rng: np.random.Generator,
    foreground_fraction: float = 0.5,
) -> tuple[list[tuple[int, int, int]], list[bool]]:
    """Patch origins in a mask at least patch-sized; a share is centred on foreground voxels."""
    foreground = np.argwhere(mask)
    limits = [extent - size for extent, size in zip(mask.shape, patch)]
    starts: list[tuple[int, int, int]] = []
    centered: list[bool] = []
    for _ in range(n):
        if len(foreground) and rng.random() < foreground_fraction:
            center = foreground[rng.integers(len(foreground))]
            start = tuple(
                int(min(max(c - size // 2, 0), limit))
                for c, size, limit in zip(center, patch, limits)
            )
            centered.append(True)
        else:
            start = tuple(int(rng.integers(0, limit + 1)) for limit in limits)
            centered.append(False)
        starts.append(start)  # type: ignore[arg-type]
    return starts, centered


def sample_patches(
    volume: np.ndarray,
    mask: np.ndarray,
    plan: PlanConfig,
    rng: np.random.Generator,
    n: Optional[int] = None,
    foreground_fraction: float = 0.5,
    prior: Optional[np.ndarray] = None,
) -> PatchBatch:
    """Crop ``n`` (default: plan batch) patches; smaller grids are reflect-padded first.

    With a ``prior`` the same window is cropped from it as a second image channel.
    """
    patch = plan.patch_size
    n = plan.batch_size if n is None else n
    channels = [pad_to_patch(volume, patch)]
    if prior is not None:
        if prior.shape != volume.shape:
            raise ShapeMismatch(f"prior {prior.shape} and volume {volume.shape} differ")
        channels.append(pad_to_patch(prior, patch))
    mask = pad_to_patch(mask, patch)
    starts, centered = sample_patch_starts(mask, patch, n, rng, foreground_fraction)
    images = np.empty((n, len(channels), *patch), dtype=np.float32)
    masks = np.empty((n, 1, *patch), dtype=np.float32)
    for i, start in enumerate(starts):
        window = tuple(slice(s, s + size) for s, size in zip(start, patch))
        for c, channel in enumerate(channels):
            images[i, c] = channel[window]
        masks[i, 0] = mask[window]
    return PatchBatch(images=images, masks=masks, foreground_centered=centered)


class PreparedCase(NamedTuple):
    case_id: str
    image: np.ndarray
    mask: np.ndarray
    prior: Optional[np.ndarray] = None


def prepare_cases(
    manifest: DatasetManifest, partition: Partition, plan: PlanConfig
) -> list[PreparedCase]:
    """Normalize and apply the plan's resize policy, as prediction does."""
    prepared = []
    for case_id, volume, mask in load_partition(manifest, partition, require_masks=True):
        assert mask is not None
        volume, mask = case_resample_policy(normalize_intensity(volume), mask, plan.resample_shape)
        assert mask is not None
        prepared.append(PreparedCase(case_id, volume.data, mask.data))
    return prepared


def coarse_cases(
    cases: list[PreparedCase], lowres_scale: tuple[int, int, int]
) -> list[PreparedCase]:
    """Cases downsampled for a low-resolution network; masks use nearest neighbour."""
    coarse = []
    for case in cases:
        size = coarse_size(case.image.shape, lowres_scale)
        coarse.append(
            PreparedCase(
                case.case_id,
                resize_array(case.image, size),
                resize_array(case.mask, size, mode="nearest"),
            )
        )
    return coarse


def with_priors(
    cases: list[PreparedCase], model: CascadeModel, plan: PlanConfig, overlap: float = 0.5
) -> list[PreparedCase]:
    """Attach the whole-volume low-resolution probability map to every case."""
    return [
        case._replace(
            prior=lowres_probability(
                case.image, model.lowres_net, model.lowres_scale, plan, overlap
            )
        )
        for case in cases
    ]


@dataclass
class TrainState:
    """Early-stopping bookkeeping of one training stage."""

    epoch: int = -1
    best_val_dice: float = -1.0
    best_epoch: int = -1
    epochs_since_best: int = 0
    best_weights: Optional[dict[str, Tensor]] = None
    history: list[EpochRecord] = field(default_factory=list)


@dataclass
class TrainResult:
    model: SegmentationModel
    plan: PlanConfig
    history: list[EpochRecord]
    best_epoch: int
    best_val_dice: float
    checkpoint: Optional[Path] = None


def configure_torch(seed: int, settings: Optional[Settings] = None) -> None:
    settings = settings or get_settings()
    torch.manual_seed(seed)
    torch.set_num_threads(settings.TORCH_THREADS)
    if settings.DETERMINISTIC:
        torch.use_deterministic_algorithms(True, warn_only=True)


def validation_dice(
    model: nn.Module, cases: list[PreparedCase], plan: PlanConfig, overlap: float = 0.5
) -> float:
    """Mean hard Dice at threshold 0.5 over full volumes."""
    scores = []
    for case in cases:
        prob = sliding_window_predict(case.image, model, plan, overlap=overlap, prior=case.prior)
        scores.append(dice_score(prob > VALIDATION_THRESHOLD, case.mask))
    return float(np.mean(scores))


def _sample_batch(
    cases: list[PreparedCase],
    plan: PlanConfig,
    batch_size: int,
    rng: np.random.Generator,
    foreground_fraction: float,
) -> tuple[np.ndarray, np.ndarray]:
    images, masks = [], []
    for _ in range(batch_size):
        case = cases[int(rng.integers(len(cases)))]
        batch = sample_patches(
            case.image, case.mask, plan, rng, 1, foreground_fraction, prior=case.prior
        )
        images.append(batch.images)
        masks.append(batch.masks)
    return np.concatenate(images), np.concatenate(masks)


def _write_record(record: EpochRecord, log_handle: Optional[IO[str]]) -> None:
    if log_handle is not None:
        log_handle.write(json.dumps(record.model_dump()) + "\n")
        log_handle.flush()


def fit_stage(
    stage: str,
    model: nn.Module,
    plan: PlanConfig,
    cfg: TrainConfig,
    train_cases: list[PreparedCase],
    val_cases: list[PreparedCase],
    rng: np.random.Generator,
    generator: torch.Generator,
    device: torch.device,
    log_handle: Optional[IO[str]] = None,
    eval_model: Optional[nn.Module] = None,
) -> TrainState:
    """Optimize the wrapper's trainable network until patience runs out or max_epochs.

    ``model`` consumes the sampled patches; ``eval_model`` (default ``model``)
    predicts the full validation volumes. The codebook only moves on steps that
    also moved the network.
    """
    net: Any = model.trainable_net
    eval_model = model if eval_model is None else eval_model
    params = [p for p in net.parameters() if p.requires_grad]
    optimizer = torch.optim.AdamW(params, lr=cfg.lr_init, weight_decay=cfg.weight_decay)
    codebook = net.bottleneck.codebook
    batch_size = cfg.batch_size or plan.batch_size
    state = TrainState()

    for epoch in range(cfg.max_epochs):
        state.epoch = epoch
        lr = lr_schedule(epoch, cfg)
        for group in optimizer.param_groups:
            group["lr"] = lr

        model.train()
        losses: list[float] = []
        perplexities: list[float] = []
        latent: Optional[Tensor] = None
        for step in range(cfg.steps_per_epoch):
            images, masks = _sample_batch(
                train_cases, plan, batch_size, rng, cfg.foreground_oversample
            )
            x = torch.from_numpy(images).to(device)
            y = torch.from_numpy(masks).to(device)
            out: SegmentationOutput = model(x)
            total, terms = objective(out, y, cfg.loss_weights)
            if not torch.isfinite(total):
                raise NonFiniteLoss(
                    f"{stage} epoch {epoch} step {step}: total loss {float(total)} "
                    f"(terms {terms}, lr {lr:.3g})"
                )
            if total.requires_grad:
                optimizer.zero_grad(set_to_none=True)
                total.backward()
                torch.nn.utils.clip_grad_norm_(params, cfg.grad_clip_norm)
                optimizer.step()
                if out.latent is not None and out.indices is not None:
                    codebook_update(codebook, out.latent, out.indices)
                    latent = out.latent.detach()
            losses.append(float(total.detach()))
            perplexities.append(float(out.perplexity))

        if latent is not None:
            reseed_dead_codes(codebook, latent, cfg.dead_code_threshold, generator)

        val_dice = validation_dice(eval_model, val_cases, plan, cfg.val_overlap)
        record = EpochRecord(
            stage=stage,
            epoch=epoch,
            train_loss=float(np.mean(losses)),
            val_dice=val_dice,
            lr=lr,
            perplexity=float(np.mean(perplexities)),
        )
        state.history.append(record)
        _write_record(record, log_handle)
        logger.info(
            f"[{stage}] epoch {epoch}: loss={record.train_loss:.4f} val_dice={val_dice:.4f} "
            f"lr={lr:.3g} perplexity={record.perplexity:.1f}"
        )

        if val_dice > state.best_val_dice:
            state.best_val_dice = val_dice
            state.best_epoch = epoch
            state.epochs_since_best = 0
            state.best_weights = copy.deepcopy(net.state_dict())
        else:
            state.epochs_since_best += 1
            if state.epochs_since_best > cfg.patience:
                logger.info(f"[{stage}] early stop at epoch {epoch}, best epoch {state.best_epoch}")
                break

    if state.best_weights is not None:
        net.load_state_dict(state.best_weights)
    return state


class StagePlan(NamedTuple):
    name: str
    model: nn.Module
    eval_model: nn.Module
    coarse: bool


def training_stages(model: SegmentationModel, plan: PlanConfig) -> list[StagePlan]:
    """Stages in training order; ``coarse`` stages train on downsampled cases."""
    if isinstance(model, CascadeModel):
        return [
            StagePlan("lowres", model.lowres_net, model.lowres_model(), True),
            StagePlan("fullres", model.fullres_net, model, False),
        ]
    if isinstance(model, LowResModel):
        return [StagePlan(plan.variant.value, model.net, model, True)]
    return [StagePlan(plan.variant.value, model, model, False)]


def train(
    manifest: DatasetManifest,
    plan: PlanConfig,
    cfg: TrainConfig,
    out_dir: Optional[Union[str, Path]] = None,
    settings: Optional[Settings] = None,
) -> TrainResult:
    """Train the plan's model; with ``out_dir`` write the checkpoint and the JSON-lines log."""
    settings = settings or get_settings()
    configure_torch(cfg.seed, settings)
    device = torch.device(settings.DEVICE)

    train_cases = prepare_cases(manifest, Partition.TRAIN, plan)
    if not train_cases:
        raise NoTrainingCases("manifest has no annotated training case")
    val_cases = prepare_cases(manifest, Partition.VAL, plan)
    validate_on_train = not val_cases
    if validate_on_train:
        logger.warning("No validation cases; validating on the training split")
        val_cases = train_cases

    model = build_model(plan).to(device)
    rng = np.random.default_rng(cfg.seed)
    generator = torch.Generator().manual_seed(cfg.seed)

    log_handle: Optional[IO[str]] = None
    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        log_handle = (out_dir / TRAIN_LOG_NAME).open("w", encoding="utf-8")

    history: list[EpochRecord] = []
    try:
        for stage in training_stages(model, plan):
            stage_train = train_cases
            if stage.coarse:
                stage_train = coarse_cases(train_cases, plan.lowres_scale)
            state = fit_stage(
                stage.name, stage.model, plan, cfg, stage_train, val_cases, rng, generator, device,
                log_handle, eval_model=stage.eval_model,
            )
            history.extend(state.history)
            if isinstance(model, CascadeModel) and stage.model is model.lowres_net:
                train_cases = with_priors(train_cases, model, plan, cfg.val_overlap)
                val_cases = (
                    train_cases
                    if validate_on_train
                    else with_priors(val_cases, model, plan, cfg.val_overlap)
                )
                logger.info(f"Computed low-resolution priors for {len(train_cases)} training cases")
    finally:
        if log_handle is not None:
            log_handle.close()

    result = TrainResult(
        model=model,
        plan=plan,
        history=history,
        best_epoch=state.best_epoch,
        best_val_dice=state.best_val_dice,
    )
    if out_dir is not None:
        result.checkpoint = save_checkpoint(
            Path(out_dir) / CHECKPOINT_NAME, model, plan, state.best_epoch, state.best_val_dice
        )
    logger.info(
        f"Training finished: best val dice {state.best_val_dice:.4f} at epoch {state.best_epoch}"
    )
    return result
