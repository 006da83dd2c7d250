"""Pytest configuration and fixtures."""

import json
from pathlib import Path

import numpy as np
import pytest

from synergyseg.config import Settings
from synergyseg.models import (
    AggregateMetrics,
    DatasetManifest,
    MetricsReport,
    PhantomSpec,
    PlanConfig,
    TrainConfig,
    Variant,
)
from synergyseg.services.phantom import generate_corpus

FIXTURES = Path(__file__).parent / "fixtures"


@pytest.fixture(scope="function")
def test_settings() -> Settings:
    """Settings independent of any local .env file."""
    return Settings(_env_file=None, DEVICE="cpu", TORCH_THREADS=1, DETERMINISTIC=True)


@pytest.fixture(scope="function")
def rng() -> np.random.Generator:
    return np.random.default_rng(1234)


def make_plan(
    patch_size=(8, 8, 8),
    channels=(4, 4),
    pooling=((1, 1, 1),),
    variant=Variant.FULLRES,
    lowres_scale=(1, 1, 1),
    **overrides,
) -> PlanConfig:
    """Small plan for fast network and training tests."""
    values = dict(
        variant=variant,
        patch_size=patch_size,
        batch_size=1,
        n_stages=len(channels),
        channels_per_stage=list(channels),
        pooling_per_axis_per_stage=list(pooling),
        lowres_scale=lowres_scale,
        codebook_size=8,
        latent_dim=4,
        attention_heads=2,
    )
    values.update(overrides)
    return PlanConfig(**values)


@pytest.fixture(scope="function")
def tiny_plan() -> PlanConfig:
    """Two stages, patch 8^3, K=8."""
    return make_plan()


@pytest.fixture(scope="function")
def corpus_plan() -> PlanConfig:
    """Plan whose patch equals the phantom corpus grid (16, 16, 8)."""
    return make_plan(patch_size=(16, 16, 8), channels=(4, 8))


@pytest.fixture(scope="function")
def fast_train_config() -> TrainConfig:
    return TrainConfig(
        lr_init=1e-3, lr_min=1e-5, max_epochs=2, patience=1, steps_per_epoch=2, seed=0
    )


@pytest.fixture(scope="function")
def phantom_corpus(tmp_path: Path) -> tuple[DatasetManifest, Path]:
    """Five (16, 16, 8) phantoms with a 3/1/1 split."""
    out_dir = tmp_path / "corpus"
    template = PhantomSpec(grid_shape=(16, 16, 8), noise_sigma=0.1)
    manifest = generate_corpus(5, template, seed=0, out_dir=out_dir)
    return manifest, out_dir


def load_table(name: str) -> list[tuple[str, MetricsReport]]:
    """Published comparison table stored as (method, report) pairs."""
    payload = json.loads((FIXTURES / name).read_text(encoding="utf-8"))
    rows = []
    for row in payload["rows"]:
        method = row.pop("method")
        report = MetricsReport(
            label=method, split="test", aggregate=AggregateMetrics(**row), n_cases=0
        )
        rows.append((method, report))
    return rows
