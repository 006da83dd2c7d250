"""Static training-curve plots."""

import json
import logging
from collections.abc import Sequence
from pathlib import Path
from typing import Union

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
from matplotlib.figure import Figure  # noqa: E402

from synergyseg.errors import IOFailure, UnreadableFile  # noqa: E402
from synergyseg.models import EpochRecord  # noqa: E402

logger = logging.getLogger(__name__)

CURVES_NAME = "training_curves.png"


def read_training_log(path: Union[str, Path]) -> list[EpochRecord]:
    path = Path(path)
    try:
        lines = path.read_text(encoding="utf-8").splitlines()
    except OSError as e:
        raise UnreadableFile(f"{path}: {e}") from e
    return [EpochRecord.model_validate(json.loads(line)) for line in lines if line.strip()]


# (EpochRecord field, y-axis label) per panel
PANELS = (
    ("train_loss", "Training loss"),
    ("val_dice", "Validation Dice"),
    ("lr", "Learning rate"),
    ("perplexity", "Codebook perplexity"),
)


def curves_figure(records: Sequence[EpochRecord]) -> Figure:
    """2x2 grid of the per-epoch log fields, one line per training stage."""
    stages = list(dict.fromkeys(r.stage for r in records))
    fig, axes = plt.subplots(2, 2, figsize=(10, 8), dpi=120)
    for ax, (field, label) in zip(axes.flat, PANELS):
        for stage in stages:
            rows = [r for r in records if r.stage == stage]
            ax.plot([r.epoch for r in rows], [getattr(r, field) for r in rows], label=stage)
        ax.set_xlabel("Epoch")
        ax.set_ylabel(label)
        if stages:
            ax.legend()
    axes[0, 1].set_ylim(0.0, 1.0)
    fig.tight_layout()
    return fig


def plot_training_curves(records: Sequence[EpochRecord], out_png: Union[str, Path]) -> Path:
    """Write the loss, Dice, learning-rate and perplexity curves to ``out_png``."""
    out_png = Path(out_png)
    fig = curves_figure(records)
    try:
        out_png.parent.mkdir(parents=True, exist_ok=True)
        fig.savefig(out_png)
    except OSError as e:
        raise IOFailure(f"Failed to write {out_png}: {e}") from e
    finally:
        plt.close(fig)
    logger.debug(f"Wrote training curves to {out_png}")
    return out_png
