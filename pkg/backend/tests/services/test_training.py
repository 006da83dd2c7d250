"""Tests for the objective, schedules, patch sampling and the training loop."""

import copy
import json
import math

import numpy as np
import pytest
import torch

from synergyseg.errors import NonFiniteLoss, ShapeMismatch
from synergyseg.models import EpochRecord, LossWeights, Schedule, TrainConfig, Variant
from synergyseg.network import SegmentationOutput, build_model, load_checkpoint
from synergyseg.network.unet import zero_aux
from synergyseg.services import training
from synergyseg.services.training import (
    TRAIN_LOG_NAME,
    bce_dice_loss,
    lr_schedule,
    objective,
    sample_patch_starts,
    sample_patches,
    segmentation_terms,
    train,
)
from tests.conftest import make_plan


def test_zero_logits_give_ln2_cross_entropy():
    """Test BCE of zero logits is ln 2 for any target."""
    target = (torch.rand(1, 1, 4, 4, 4, generator=torch.Generator().manual_seed(0)) > 0.5).float()
    bce, _ = segmentation_terms(torch.zeros(1, 1, 4, 4, 4), target)
    assert float(bce) == pytest.approx(math.log(2.0), rel=1e-6)


def test_saturated_logits_give_zero_loss():
    """Test confident correct logits drive both terms to zero."""
    target = torch.zeros(1, 1, 4, 4, 4)
    target[..., 1:3, 1:3, 1:3] = 1.0
    logits = 50.0 * (2 * target - 1)
    assert float(bce_dice_loss(logits, target)) == pytest.approx(0.0, abs=1e-6)


def test_soft_dice_matches_direct_formula():
    """Test the soft Dice term against its closed form."""
    generator = torch.Generator().manual_seed(1)
    logits = torch.randn(2, 1, 3, 3, 3, generator=generator)
    target = (torch.rand(2, 1, 3, 3, 3, generator=generator) > 0.5).float()
    _, dice = segmentation_terms(logits, target)

    p = torch.sigmoid(logits)
    expected = 1 - (2 * (p * target).sum() + 1e-5) / (p.sum() + target.sum() + 1e-5)
    assert float(dice) == pytest.approx(float(expected), rel=1e-6)


def test_loss_shape_mismatch():
    """Test mismatched logits and targets are rejected."""
    with pytest.raises(ShapeMismatch):
        segmentation_terms(torch.zeros(1, 1, 4, 4, 4), torch.zeros(1, 1, 4, 4, 2))


def test_objective_weights_and_zero_case():
    """Test the weighted sum and the all-zero weight constant."""
    logits = torch.zeros(1, 1, 2, 2, 2, requires_grad=True)
    out = SegmentationOutput(
        logits=logits,
        vq_loss=torch.tensor(0.5),
        commit_loss=torch.tensor(2.0),
        perplexity=torch.tensor(1.0),
    )
    target = torch.ones(1, 1, 2, 2, 2)

    total, terms = objective(out, target, LossWeights())
    expected = terms["bce"] + terms["dice"] + 0.5 + 0.25 * 2.0
    assert float(total) == pytest.approx(expected, rel=1e-6)

    zero, _ = objective(out, target, LossWeights(bce=0, dice=0, vq=0, commit=0))
    assert float(zero) == 0.0
    assert not zero.requires_grad


def test_cosine_schedule_endpoints():
    """Test cosine annealing starts at lr_init and ends at lr_min."""
    cfg = TrainConfig(lr_init=1e-3, lr_min=1e-5, max_epochs=100, patience=10)
    assert lr_schedule(0, cfg) == pytest.approx(1e-3)
    assert lr_schedule(50, cfg) == pytest.approx((1e-3 + 1e-5) / 2)
    assert lr_schedule(100, cfg) == pytest.approx(1e-5)
    values = [lr_schedule(e, cfg) for e in range(101)]
    assert all(a >= b for a, b in zip(values, values[1:]))


def test_step_schedule():
    """Test the stepwise decay alternative."""
    cfg = TrainConfig(
        lr_init=1e-2, schedule=Schedule.STEP, step_decay=0.1, step_every=10, max_epochs=100
    )
    assert lr_schedule(9, cfg) == pytest.approx(1e-2)
    assert lr_schedule(25, cfg) == pytest.approx(1e-2 * 0.9**2)


def test_train_config_patience_bound():
    """Test patience larger than max_epochs is rejected."""
    with pytest.raises(ValueError):
        TrainConfig(max_epochs=5, patience=6)


def test_patch_sampling_background_only(rng):
    """Test masks without foreground always sample uniformly."""
    _, centered = sample_patch_starts(np.zeros((16, 16, 8)), (8, 8, 4), 50, rng, 1.0)
    assert not any(centered)


def test_patch_sampling_identity_crop(rng):
    """Test a patch equal to the volume returns the volume."""
    plan = make_plan(patch_size=(8, 8, 8))
    volume = rng.standard_normal((8, 8, 8)).astype(np.float32)
    mask = (volume > 0).astype(np.uint8)
    batch = sample_patches(volume, mask, plan, rng, n=3)
    for i in range(3):
        assert np.array_equal(batch.images[i, 0], volume)
        assert np.array_equal(batch.masks[i, 0], mask)


def test_patch_sampling_pads_small_volumes(rng):
    """Test volumes smaller than the patch are padded up to it."""
    plan = make_plan(patch_size=(8, 8, 8))
    batch = sample_patches(np.ones((6, 8, 4), np.float32), np.ones((6, 8, 4), np.uint8), plan, rng)
    assert batch.images.shape == (1, 1, 8, 8, 8)


def test_foreground_oversampling_rate(rng):
    """Test half of 10^4 patches are centred on foreground and contain it."""
    mask = np.zeros((32, 32, 16), dtype=np.uint8)
    mask[2:5, 20:24, 3:6] = 1
    starts, centered = sample_patch_starts(mask, (8, 8, 8), 10_000, rng, 0.5)

    assert abs(np.mean(centered) - 0.5) <= 0.03
    for start, is_centered in zip(starts[:500], centered[:500]):
        window = tuple(slice(s, s + 8) for s in start)
        if is_centered:
            assert mask[window].any()


def test_zero_weights_leave_model_state_unchanged(phantom_corpus, corpus_plan, test_settings):
    """Test an all-zero objective moves neither parameters nor codebook buffers."""
    manifest, _ = phantom_corpus
    cfg = TrainConfig(
        max_epochs=2,
        patience=2,
        steps_per_epoch=2,
        loss_weights=LossWeights(bce=0, dice=0, vq=0, commit=0),
    )
    result = train(manifest, corpus_plan, cfg, settings=test_settings)

    torch.manual_seed(cfg.seed)
    reference = build_model(corpus_plan).state_dict()
    trained = result.model.state_dict()
    assert trained.keys() == reference.keys()
    assert any(key.endswith("usage_ema") for key in trained)
    for key, value in trained.items():
        assert torch.equal(value, reference[key]), key


def test_zero_patience_stops_after_first_non_improvement(
    phantom_corpus, corpus_plan, test_settings, monkeypatch
):
    """Test patience 0 stops at the first epoch without improvement."""
    manifest, _ = phantom_corpus
    monkeypatch.setattr(training, "validation_dice", lambda *args, **kwargs: 0.5)
    cfg = TrainConfig(max_epochs=10, patience=0, steps_per_epoch=1)

    result = train(manifest, corpus_plan, cfg, settings=test_settings)

    assert len(result.history) == 2
    assert result.best_epoch == 0


def test_best_weights_are_restored(phantom_corpus, corpus_plan, test_settings, monkeypatch):
    """Test the returned model carries the weights of the best validation epoch."""
    manifest, _ = phantom_corpus
    scores = iter([0.2, 0.6, 0.4, 0.6, 0.1])
    snapshots = []

    def fake_validation(model, cases, plan, overlap=0.5):
        snapshots.append(copy.deepcopy(model.state_dict()))
        return next(scores)

    monkeypatch.setattr(training, "validation_dice", fake_validation)
    cfg = TrainConfig(lr_init=1e-3, lr_min=1e-5, max_epochs=5, patience=5, steps_per_epoch=1)

    result = train(manifest, corpus_plan, cfg, settings=test_settings)

    assert result.best_epoch == 1
    assert result.best_val_dice == pytest.approx(0.6)
    assert [r.val_dice for r in result.history] == [0.2, 0.6, 0.4, 0.6, 0.1]
    for key, value in result.model.state_dict().items():
        assert torch.equal(value, snapshots[1][key]), key


def test_training_loss_decreases(phantom_corpus, corpus_plan, test_settings):
    """Test the mean loss of the last epochs is below that of the first."""
    manifest, _ = phantom_corpus
    cfg = TrainConfig(
        lr_init=1e-3, lr_min=1e-4, max_epochs=50, patience=50, steps_per_epoch=1
    )
    result = train(manifest, corpus_plan, cfg, settings=test_settings)

    losses = [r.train_loss for r in result.history]
    assert len(losses) == 50
    assert np.mean(losses[-5:]) < np.mean(losses[:5])


def test_non_finite_loss_aborts(phantom_corpus, corpus_plan, test_settings, monkeypatch):
    """Test a NaN objective stops training with NonFiniteLoss."""
    manifest, _ = phantom_corpus

    def nan_objective(out, target, weights):
        return torch.tensor(float("nan")), {}

    monkeypatch.setattr(training, "objective", nan_objective)
    with pytest.raises(NonFiniteLoss):
        train(manifest, corpus_plan, TrainConfig(max_epochs=1, patience=0), settings=test_settings)


def test_log_and_checkpoint_written(
    phantom_corpus, corpus_plan, fast_train_config, test_settings, tmp_path
):
    """Test the JSON-lines log mirrors the history and the checkpoint reloads."""
    manifest, _ = phantom_corpus
    out_dir = tmp_path / "run"
    result = train(manifest, corpus_plan, fast_train_config, out_dir=out_dir, settings=test_settings)

    lines = (out_dir / TRAIN_LOG_NAME).read_text(encoding="utf-8").splitlines()
    records = [EpochRecord(**json.loads(line)) for line in lines]
    assert records == result.history
    assert all(r.stage == "fullres3d" for r in records)
    assert all(0.0 <= r.val_dice <= 1.0 for r in records)
    assert result.best_val_dice == max(r.val_dice for r in records)

    loaded = load_checkpoint(result.checkpoint)
    assert loaded.epoch == result.best_epoch
    assert loaded.plan == corpus_plan


def test_training_is_deterministic(phantom_corpus, corpus_plan, fast_train_config, test_settings):
    """Test the same seed reproduces the history and the weights."""
    manifest, _ = phantom_corpus
    first = train(manifest, corpus_plan, fast_train_config, settings=test_settings)
    second = train(manifest, corpus_plan, fast_train_config, settings=test_settings)

    assert first.history == second.history
    for key, value in first.model.state_dict().items():
        assert torch.equal(value, second.model.state_dict()[key]), key


def test_cascade_trains_two_stages(phantom_corpus, fast_train_config, test_settings):
    """Test the cascade trains its low-resolution net before the refiner."""
    manifest, _ = phantom_corpus
    plan = make_plan(
        patch_size=(16, 16, 8), channels=(4, 8), variant=Variant.CASCADE, lowres_scale=(2, 2, 2)
    )
    result = train(manifest, plan, fast_train_config, settings=test_settings)

    stages = [r.stage for r in result.history]
    n_low, n_full = stages.count("lowres"), stages.count("fullres")
    assert n_low >= 1 and n_full >= 1
    assert stages == ["lowres"] * n_low + ["fullres"] * n_full


def test_validation_wraps_plain_modules(corpus_plan):
    """Test validation Dice of a model that predicts the mask exactly."""
    mask = np.zeros((16, 16, 8), dtype=np.uint8)
    mask[4:12, 4:12, 2:6] = 1

    class Oracle(torch.nn.Module):
        def forward(self, x):
            return zero_aux((x > 0).float() * 40.0 - 20.0)

    case = training.PreparedCase("c", mask.astype(np.float32), mask)
    assert training.validation_dice(Oracle(), [case], corpus_plan) == pytest.approx(1.0)


def test_patch_sampling_crops_prior_with_image(rng):
    """Test a prior channel is cropped from the same window as the image."""
    plan = make_plan(patch_size=(8, 8, 4))
    volume = rng.standard_normal((16, 16, 8)).astype(np.float32)
    mask = (volume > 1.0).astype(np.uint8)
    batch = sample_patches(volume, mask, plan, rng, n=6, prior=2.0 * volume)

    assert batch.images.shape == (6, 2, 8, 8, 4)
    assert np.allclose(batch.images[:, 1], 2.0 * batch.images[:, 0])
    with pytest.raises(ShapeMismatch):
        sample_patches(volume, mask, plan, rng, prior=volume[:8])


def test_coarse_cases_downsample_image_and_mask():
    """Test low-resolution training cases live on the downsampled grid."""
    mask = np.zeros((16, 16, 8), dtype=np.uint8)
    mask[4:12, 4:12, 2:6] = 1
    case = training.PreparedCase("c", mask.astype(np.float32), mask)

    (coarse,) = training.coarse_cases([case], (2, 2, 2))

    assert coarse.image.shape == coarse.mask.shape == (8, 8, 4)
    assert set(np.unique(coarse.mask)) == {0, 1}
    assert coarse.mask[4, 4, 2] == 1 and coarse.mask[0, 0, 0] == 0


def test_with_priors_attach_whole_volume_probabilities():
    """Test cascade priors cover the full image grid and follow the low-res net."""

    class Oracle(torch.nn.Module):
        def forward(self, x):
            return zero_aux((x[:, :1] > 0.5).float() * 40.0 - 20.0)

    plan = make_plan(
        patch_size=(8, 8, 4), channels=(4, 8), variant=Variant.CASCADE, lowres_scale=(2, 2, 2)
    )
    image = np.zeros((32, 32, 16), dtype=np.float32)
    image[8:24, 8:24, 4:12] = 1.0
    model = build_model(plan)
    model.lowres_net = Oracle()

    (case,) = training.with_priors(
        [training.PreparedCase("c", image, image.astype(np.uint8))], model, plan
    )

    assert case.prior.shape == (32, 32, 16)
    assert case.prior[16, 16, 8] > 0.99 and case.prior[0, 0, 0] < 0.01
    assert case.prior.min() >= 0.0 and case.prior.max() <= 1.0
