"""CLI commands for synergyseg."""

import json
import logging
from collections.abc import Iterator
from contextlib import contextmanager
from pathlib import Path
from typing import Any, Optional, TypeVar

import typer
from pydantic import ValidationError

from synergyseg import __version__
from synergyseg.config import get_settings
from synergyseg.errors import DegenerateGrid, SynergySegError, TooFewCases
from synergyseg.models import (
    DatasetFingerprint,
    EvaluateRunConfig,
    FingerprintRunConfig,
    MemoryBudget,
    MetricsReport,
    Partition,
    PhantomRunConfig,
    PhantomSpec,
    PlanConfig,
    PlanRunConfig,
    PredictRunConfig,
    ReportRunConfig,
    RunConfig,
    RunSummary,
    Shape3,
    TrainRunConfig,
    Variant,
    ZeroShotRunConfig,
)
from synergyseg.network import load_checkpoint
from synergyseg.services.artifacts import make_provenance, read_json_artifact, write_json_artifact
from synergyseg.services.autoconfig import (
    attach_resample_policy,
    default_plan,
    fingerprint_dataset,
    plan_configuration,
)
from synergyseg.services.inference import predict_dataset
from synergyseg.services.metrics import evaluate_dataset
from synergyseg.services.phantom import generate_corpus
from synergyseg.services.plotting import CURVES_NAME, plot_training_curves
from synergyseg.services.reporting import render_csv, render_table
from synergyseg.services.training import TRAIN_LOG_NAME, train
from synergyseg.services.volume_io import load_manifest

logger = logging.getLogger(__name__)

app = typer.Typer(help="Auto-configured 3D segmentation with a synergistic latent bottleneck")

RunT = TypeVar("RunT", bound=RunConfig)

# errors caused by flag values rather than by the data or the environment
USAGE_ERRORS = (TooFewCases, DegenerateGrid)
ZERO_SHOT_LABEL = "zero-shot"

ConfigOption = typer.Option(None, "--config", help="JSON file with defaults for this command")


def parse_grid(value: str) -> Shape3:
    """Parse an ``XxYxZ`` grid flag."""
    parts = value.lower().split("x")
    try:
        shape = tuple(int(p) for p in parts)
    except ValueError:
        raise typer.BadParameter(f"expected XxYxZ, got {value!r}") from None
    if len(shape) != 3 or min(shape) < 1:
        raise typer.BadParameter(f"expected three positive extents XxYxZ, got {value!r}")
    return shape  # type: ignore[return-value]


def _unset(value: Any) -> bool:
    return value is None or (isinstance(value, (list, tuple)) and not value)


def _usage_error(message: str) -> typer.Exit:
    typer.echo(f"Usage error: {message}", err=True)
    return typer.Exit(code=2)


def resolve_config(model: type[RunT], config_path: Optional[Path], **flags: Any) -> RunT:
    """Merge flag > config file > model default; unknown config keys are rejected."""
    data: dict[str, Any] = {}
    if config_path is not None:
        try:
            data = json.loads(config_path.read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as e:
            raise _usage_error(f"cannot read config {config_path}: {e}") from e
        if not isinstance(data, dict):
            raise _usage_error(f"config {config_path} must hold a JSON object")
    data.update({k: v for k, v in flags.items() if not _unset(v)})
    try:
        return model.model_validate(data)
    except ValidationError as e:
        raise _usage_error(str(e)) from e


def _resolved(cfg: RunConfig) -> dict[str, Any]:
    return cfg.model_dump(mode="json")


@contextmanager
def handle_errors() -> Iterator[None]:
    """Map domain errors onto exit codes: 2 for bad flags, 1 for runtime failures."""
    try:
        yield
    except USAGE_ERRORS as e:
        raise _usage_error(f"{type(e).__name__}: {e}") from e
    except SynergySegError as e:
        typer.echo(f"✗ {type(e).__name__}: {e}", err=True)
        raise typer.Exit(code=1) from e


@app.callback()
def main(
    verbose: bool = typer.Option(False, "--verbose", "-v", help="Log at DEBUG level"),
) -> None:
    """Configure logging once for every command."""
    settings = get_settings()
    level = logging.DEBUG if verbose or settings.DEBUG else settings.LOG_LEVEL.upper()
    logging.basicConfig(
        level=level, format="%(asctime)s %(levelname)s %(name)s: %(message)s", force=True
    )


@app.command()
def version() -> None:
    """Print the tool version."""
    typer.echo(__version__)


@app.command()
def phantom(
    n: Optional[int] = typer.Option(None, "--n", help="Number of cases"),
    grid: Optional[list[str]] = typer.Option(None, "--grid", help="Grid XxYxZ; repeat for mixed grids"),
    severity: Optional[float] = typer.Option(None, "--severity", help="Boundary nodularity in [0, 1]"),
    noise: Optional[float] = typer.Option(None, "--noise", help="Gaussian noise sigma"),
    modality: Optional[str] = typer.Option(None, "--modality", help="Modality tag of the corpus"),
    seed: Optional[int] = typer.Option(None, "--seed"),
    out: Optional[Path] = typer.Option(None, "--out", help="Output directory"),
    config: Optional[Path] = ConfigOption,
) -> None:
    """Generate a synthetic phantom corpus and its manifest."""
    grids = [parse_grid(g) for g in grid] if grid else None
    cfg = resolve_config(
        PhantomRunConfig, config, n=n, grids=grids, severity=severity, noise=noise,
        modality=modality, seed=seed, out=out,
    )
    with handle_errors():
        template = PhantomSpec(
            grid_shape=cfg.grids[0],
            severity=cfg.severity,
            noise_sigma=cfg.noise,
            seed=cfg.seed,
            modality_tag=cfg.modality,
        )
        manifest = generate_corpus(
            cfg.n, template, cfg.seed, cfg.out, grid_shapes=cfg.grids,
            provenance=make_provenance(_resolved(cfg)),
        )
    typer.echo(f"✓ Wrote {len(manifest.cases)} cases to {cfg.out}")


@app.command()
def fingerprint(
    manifest: Optional[Path] = typer.Option(None, "--manifest", help="Dataset manifest JSON"),
    resample: Optional[str] = typer.Option(None, "--resample", help="Resize every case to XxYxZ"),
    out: Optional[Path] = typer.Option(None, "--out", help="Fingerprint JSON"),
    config: Optional[Path] = ConfigOption,
) -> None:
    """Compute the dataset fingerprint over the training split."""
    resample_shape = parse_grid(resample) if resample else None
    cfg = resolve_config(
        FingerprintRunConfig, config, manifest=manifest, resample_shape=resample_shape, out=out
    )
    with handle_errors():
        fp = fingerprint_dataset(load_manifest(cfg.manifest), cfg.resample_shape)
        write_json_artifact(
            fp, cfg.out, make_provenance(_resolved(cfg), {"manifest": cfg.manifest})
        )
    typer.echo(f"✓ Fingerprint over {fp.n_cases} cases written to {cfg.out}")


@app.command()
def plan(
    fingerprint: Optional[Path] = typer.Option(None, "--fingerprint", help="Fingerprint JSON"),
    budget_gb: Optional[float] = typer.Option(None, "--budget-gb", help="Memory budget in GB"),
    default: Optional[bool] = typer.Option(
        None, "--default/--auto", help="Emit the fixed default plan instead of auto-configuring"
    ),
    variant: Optional[Variant] = typer.Option(None, "--variant", help="Force a configuration variant"),
    out: Optional[Path] = typer.Option(None, "--out", help="Plan JSON"),
    config: Optional[Path] = ConfigOption,
) -> None:
    """Derive a training plan from a fingerprint."""
    cfg = resolve_config(
        PlanRunConfig, config, fingerprint=fingerprint, budget_gb=budget_gb, default=default,
        variant=variant, out=out,
    )
    settings = get_settings()
    with handle_errors():
        fp = read_json_artifact(DatasetFingerprint, cfg.fingerprint)
        if cfg.default:
            result = default_plan(fp)
        else:
            budget = MemoryBudget.from_gb(
                cfg.budget_gb or settings.DEFAULT_BUDGET_GB, settings.BUDGET_SAFETY_FACTOR
            )
            result = plan_configuration(fp, budget, cfg.variant)
        result = attach_resample_policy(result, fp)
        write_json_artifact(
            result, cfg.out, make_provenance(_resolved(cfg), {"fingerprint": cfg.fingerprint})
        )
    typer.echo(
        f"✓ {result.variant.value} plan: patch {result.patch_size}, batch {result.batch_size}, "
        f"{result.n_stages} stages -> {cfg.out}"
    )


@app.command("train")
def train_command(
    manifest: Optional[Path] = typer.Option(None, "--manifest", help="Dataset manifest JSON"),
    plan_path: Optional[Path] = typer.Option(None, "--plan", help="Plan JSON"),
    seed: Optional[int] = typer.Option(None, "--seed"),
    out: Optional[Path] = typer.Option(None, "--out", help="Run directory"),
    config: Optional[Path] = ConfigOption,
) -> None:
    """Train a model; writes the checkpoint, the JSON-lines log and the curve plot."""
    cfg = resolve_config(
        TrainRunConfig, config, manifest=manifest, plan=plan_path, seed=seed, out=out
    )
    with handle_errors():
        plan_config = read_json_artifact(PlanConfig, cfg.plan)
        result = train(load_manifest(cfg.manifest), plan_config, cfg.train, cfg.out)
        plot_training_curves(result.history, cfg.out / CURVES_NAME)
        summary = RunSummary(
            command="train",
            outputs={
                "checkpoint": str(result.checkpoint),
                "log": str(cfg.out / TRAIN_LOG_NAME),
                "best_epoch": result.best_epoch,
                "best_val_dice": result.best_val_dice,
                "epochs_run": len(result.history),
            },
        )
        write_json_artifact(
            summary,
            cfg.out / "run.json",
            make_provenance(_resolved(cfg), {"manifest": cfg.manifest, "plan": cfg.plan}),
        )
    typer.echo(f"✓ Best validation Dice {result.best_val_dice:.4f}; checkpoint {result.checkpoint}")


def _predict(checkpoint: Path, manifest_path: Path, split: Partition, out: Path) -> list[str]:
    loaded = load_checkpoint(checkpoint)
    return predict_dataset(loaded.model, loaded.plan, load_manifest(manifest_path), split, out)


@app.command()
def predict(
    checkpoint: Optional[Path] = typer.Option(None, "--checkpoint", help="Checkpoint file"),
    manifest: Optional[Path] = typer.Option(None, "--manifest", help="Dataset manifest JSON"),
    split: Optional[Partition] = typer.Option(None, "--split"),
    out: Optional[Path] = typer.Option(None, "--out", help="Prediction directory"),
    config: Optional[Path] = ConfigOption,
) -> None:
    """Write probability volumes and postprocessed masks for one split."""
    cfg = resolve_config(
        PredictRunConfig, config, checkpoint=checkpoint, manifest=manifest, split=split, out=out
    )
    with handle_errors():
        case_ids = _predict(cfg.checkpoint, cfg.manifest, cfg.split, cfg.out)
        write_json_artifact(
            RunSummary(command="predict", outputs={"cases": case_ids}),
            cfg.out / "predictions.json",
            make_provenance(
                _resolved(cfg), {"checkpoint": cfg.checkpoint, "manifest": cfg.manifest}
            ),
        )
    typer.echo(f"✓ Predicted {len(case_ids)} cases into {cfg.out}")


def _evaluate(
    pred: Path, manifest_path: Path, split: Partition, label: str, cfg: RunConfig, out: Path
) -> MetricsReport:
    report = evaluate_dataset(pred, load_manifest(manifest_path), split, label=label)
    write_json_artifact(
        report, out, make_provenance(_resolved(cfg), {"pred": pred, "manifest": manifest_path})
    )
    return report


@app.command()
def evaluate(
    pred: Optional[Path] = typer.Option(None, "--pred", help="Directory of <case_id>_mask files"),
    manifest: Optional[Path] = typer.Option(None, "--manifest", help="Dataset manifest JSON"),
    split: Optional[Partition] = typer.Option(None, "--split"),
    label: Optional[str] = typer.Option(None, "--label", help="Label stored in the report"),
    out: Optional[Path] = typer.Option(None, "--out", help="Report JSON"),
    config: Optional[Path] = ConfigOption,
) -> None:
    """Score predictions of one split against the manifest's masks."""
    cfg = resolve_config(
        EvaluateRunConfig, config, pred=pred, manifest=manifest, split=split, label=label, out=out
    )
    with handle_errors():
        report = _evaluate(cfg.pred, cfg.manifest, cfg.split, cfg.label, cfg, cfg.out)
    typer.echo(f"✓ {report.n_cases} cases, mean Dice {report.aggregate.dice:.4f} -> {cfg.out}")


@app.command()
def report(
    reports: Optional[list[Path]] = typer.Option(None, "--reports", help="Report JSON; repeatable"),
    names: Optional[list[str]] = typer.Option(None, "--names", help="Method name per report"),
    out: Optional[Path] = typer.Option(None, "--out", help="Write the text table here"),
    csv_path: Optional[Path] = typer.Option(None, "--csv", help="Write the CSV table here"),
    config: Optional[Path] = ConfigOption,
) -> None:
    """Render a comparison table with best and second-best marks."""
    cfg = resolve_config(
        ReportRunConfig, config, reports=reports, names=names, out=out, csv=csv_path
    )
    if not cfg.reports:
        raise _usage_error("at least one --reports file is required")
    if cfg.names and len(cfg.names) != len(cfg.reports):
        raise _usage_error(f"{len(cfg.names)} names for {len(cfg.reports)} reports")

    with handle_errors():
        loaded = [read_json_artifact(MetricsReport, path) for path in cfg.reports]
        labels = cfg.names or [r.label or path.stem for r, path in zip(loaded, cfg.reports)]
        named = list(zip(labels, loaded))
        table = render_table(named)
        if cfg.out is not None:
            cfg.out.parent.mkdir(parents=True, exist_ok=True)
            cfg.out.write_text(table, encoding="utf-8")
        if cfg.csv is not None:
            cfg.csv.parent.mkdir(parents=True, exist_ok=True)
            cfg.csv.write_text(render_csv(named), encoding="utf-8")
    typer.echo(table, nl=False)


@app.command()
def zeroshot(
    checkpoint: Optional[Path] = typer.Option(None, "--checkpoint", help="Checkpoint file"),
    manifest: Optional[Path] = typer.Option(None, "--manifest", help="Foreign dataset manifest"),
    split: Optional[Partition] = typer.Option(None, "--split"),
    out: Optional[Path] = typer.Option(None, "--out", help="Output directory"),
    config: Optional[Path] = ConfigOption,
) -> None:
    """Predict and evaluate on another dataset without fine-tuning."""
    cfg = resolve_config(
        ZeroShotRunConfig, config, checkpoint=checkpoint, manifest=manifest, split=split, out=out
    )
    pred_dir = cfg.out / "predictions"
    with handle_errors():
        _predict(cfg.checkpoint, cfg.manifest, cfg.split, pred_dir)
        result = _evaluate(
            pred_dir, cfg.manifest, cfg.split, ZERO_SHOT_LABEL, cfg, cfg.out / "report.json"
        )
    typer.echo(render_table([(ZERO_SHOT_LABEL, result)]), nl=False)


if __name__ == "__main__":
    app()
