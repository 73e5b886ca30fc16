#!/usr/bin/env python3
"""
SSL-DETR Lab - Command Line Entry Point
Pre-training, (multi-task) training, evaluation and SSL visualisation runs
"""
import functools
import json
import os
import sys
import time
from datetime import datetime
from pathlib import Path

import click
import torch

# Add the project root to the path
sys.path.append(os.path.dirname(__file__))

from config.experiment import TrainingMode, load_experiment
from config.settings import RUNTIME_CONFIG, setup_logging
from src.errors import ConfigValidationError, ConfigurationError, DatasetError, SSLDetrError
from src.evaluation.predictor import evaluate_model
from src.extractors.coco_extractor import export_coco, load_coco
from src.extractors.file_extractor import load_image_folder
from src.extractors.sources import load_datasets
from src.extractors.synthetic_extractor import SyntheticConfig, synthetic_splits, write_images
from src.loaders.checkpoint_loader import load_checkpoint
from src.pipelines.run_manifest import MANIFEST_NAME, RunManifest, lineage, prepare_run_directory
from src.pipelines.training_pipeline import run_training
from src.transformers.preprocessing import resize_image, to_tensor_image
from src.transformers.ssl_tasks import SSLTaskConfig, SSLTaskKind
from src.visualization.ssl_panels import visualize_ssl

SSL_TASKS = [kind.value for kind in SSLTaskKind]


def handle_errors(command):
    """Library errors become a message (or JSON) and a nonzero exit code"""

    @functools.wraps(command)
    def wrapper(*args, **kwargs):
        ctx = click.get_current_context()
        try:
            return command(*args, **kwargs)
        except SSLDetrError as e:
            if ctx.obj.get("json_errors"):
                click.echo(json.dumps({"error": type(e).__name__, "message": str(e), "details": e.details()}),
                           err=True)
            else:
                click.echo(f"❌ {type(e).__name__}: {e}", err=True)
            ctx.exit(2 if isinstance(e, ConfigValidationError) else 1)

    return wrapper


def default_run_dir(command: str) -> Path:
    stamp = datetime.now().strftime("%Y%m%d-%H%M%S")
    return Path(RUNTIME_CONFIG['runs_dir']) / f"{command}-{stamp}"


def training_run(command: str, config, output_dir, force: bool, resume: bool, init=None) -> Path:
    """Shared body of pretrain/train: data, run directory, manifest, epochs"""
    run_dir = prepare_run_directory(output_dir or config.output_dir or default_run_dir(command),
                                    force=force or resume)
    train, val = load_datasets(config.data, config.seed)
    manifest = RunManifest(command=command, config=config.to_dict(), seed=config.seed, parent=lineage(init))
    if resume and (run_dir / MANIFEST_NAME).exists():
        # a resumed run keeps its identity
        previous = RunManifest.read(run_dir)
        manifest.run_id, manifest.started_at = previous.run_id, previous.started_at
    manifest.write(run_dir)
    click.echo(f"🚀 {command}: {config.mode.value} on {len(train)} images -> {run_dir}")
    started = time.perf_counter()
    try:
        result = run_training(config, train, run_dir, val=val, init_checkpoint=init, resume=resume)
    except BaseException:
        manifest.finish("failed")
        manifest.write(run_dir)
        raise
    manifest.artifacts = {"checkpoint": str(result.checkpoint), "metrics": str(result.metrics_path)}
    manifest.timings = {"total_seconds": time.perf_counter() - started,
                        "epoch_seconds_mean": sum(result.epoch_seconds) / max(len(result.epoch_seconds), 1)}
    manifest.finish()
    manifest.write(run_dir)

    if result.rows:
        last = result.rows[-1]
        click.echo(f"✅ Finished {len(result.rows)} epochs, final loss {last['loss']:.4f}")
        if "eval" in last:
            click.echo(f"📊 Validation AP {last['eval']['map']:.4f} | AP50 {last['eval']['ap50']:.4f}")
    click.echo(f"💾 Checkpoint: {result.checkpoint}")
    return run_dir


@click.group()
@click.option("--json-errors", is_flag=True, help="Print errors as JSON on stderr.")
@click.option("--log-level", default=None, help="Overrides SSLDETR_LOG_LEVEL.")
@click.pass_context
def cli(ctx, json_errors, log_level):
    """SSL-DETR lab: self-supervised pretext tasks for detection transformers."""
    ctx.ensure_object(dict)
    ctx.obj["json_errors"] = json_errors
    setup_logging(log_level)


def common_options(command):
    options = [
        click.option("--config", "config_path", type=click.Path(dir_okay=False), default=None),
        click.option("--ssl-task", type=click.Choice(SSL_TASKS), default=None),
        click.option("--ssl-ratio", type=float, default=None),
        click.option("--seed", type=int, default=None),
        click.option("--epochs", type=int, default=None),
        click.option("--output-dir", type=click.Path(file_okay=False), default=None),
        click.option("--force", is_flag=True, help="Reuse an output directory that already has a manifest."),
        click.option("--resume", is_flag=True, help="Continue from the checkpoint in the output directory."),
    ]
    for option in reversed(options):
        command = option(command)
    return command


def overrides(ssl_task, ssl_ratio, seed, epochs, **extra):
    values = {"ssl.task": ssl_task, "ssl.ratio": ssl_ratio, "seed": seed, "optim.epochs": epochs}
    values.update(extra)
    return values


@cli.command()
@common_options
@handle_errors
def pretrain(config_path, ssl_task, ssl_ratio, seed, epochs, output_dir, force, resume):
    """SSL-only pre-training of backbone and encoder (annotations optional)."""
    config = load_experiment(config_path, overrides(ssl_task, ssl_ratio, seed, epochs,
                                                    **{"training.mode": TrainingMode.PRETRAIN.value}))
    training_run("pretrain", config, output_dir, force, resume)


@cli.command()
@common_options
@click.option("--mode", type=click.Choice(["plain", "finetune", "multitask", "pretrain"]), default=None,
              help="Overrides training.mode; pretrain runs the same loop as the pretrain command.")
@click.option("--ssl-weight-schedule", type=click.Choice(["constant", "linear"]), default=None)
@click.option("--init", type=click.Path(dir_okay=False, exists=True), default=None,
              help="Checkpoint whose backbone and encoder initialise this run.")
@handle_errors
def train(config_path, ssl_task, ssl_ratio, seed, epochs, output_dir, force, resume, mode, ssl_weight_schedule, init):
    """Detection training, plain or multi-task with an SSL auxiliary loss (or pretrain via --mode)."""
    config = load_experiment(config_path, overrides(
        ssl_task, ssl_ratio, seed, epochs,
        **{"training.mode": None if mode is None else TrainingMode.parse(mode).value,
           "ssl.schedule.mode": ssl_weight_schedule, "training.init": init},
    ))
    command = "pretrain" if config.mode is TrainingMode.PRETRAIN else "train"
    training_run(command, config, output_dir, force, resume, init=config.training.init)


def _dataset_for_evaluation(config_path, annotations, images, split):
    if annotations:
        return load_coco(annotations, images)
    config = load_experiment(config_path)
    train, val = load_datasets(config.data, config.seed)
    return train if split == "train" else val


@cli.command()
@click.option("--checkpoint", type=click.Path(dir_okay=False, exists=True), required=True)
@click.option("--config", "config_path", type=click.Path(dir_okay=False), default=None,
              help="Experiment config whose data section provides the dataset.")
@click.option("--annotations", type=click.Path(dir_okay=False), default=None, help="COCO annotation file.")
@click.option("--images", type=click.Path(file_okay=False), default=None, help="Image root for --annotations.")
@click.option("--split", type=click.Choice(["train", "val"]), default="val")
@click.option("--output", type=click.Path(dir_okay=False), default=None, help="Where to write the report JSON.")
@handle_errors
def evaluate(checkpoint, config_path, annotations, images, split, output):
    """COCO box AP of a checkpoint on a dataset."""
    dataset = _dataset_for_evaluation(config_path, annotations, images, split)
    if dataset is None or len(dataset) == 0:
        raise DatasetError(f"no images to evaluate in the {split} split")
    model = load_checkpoint(checkpoint).build_model().to(RUNTIME_CONFIG['device'])
    click.echo(f"🔍 Evaluating {checkpoint} on {len(dataset)} images...")
    report = evaluate_model(model, dataset)

    output = Path(output) if output else Path(checkpoint).with_name("eval.json")
    output.write_text(report.to_json(), encoding="utf-8")
    click.echo(report.to_frame().to_string(index=False, float_format=lambda v: f"{v:.4f}"))
    click.echo(report.per_class_frame({dataset.category_ids[k]: name for k, name in dataset.classes.items()})
               .to_string(index=False, float_format=lambda v: f"{v:.4f}"))
    click.echo(f"💾 Report: {output}")


@cli.command("visualize-ssl")
@click.option("--checkpoint", type=click.Path(dir_okay=False, exists=True), required=True)
@click.option("--images", type=click.Path(file_okay=False, exists=True), required=True)
@click.option("--ssl-task", type=click.Choice(SSL_TASKS), default=None)
@click.option("--ssl-ratio", type=float, default=None)
@click.option("--count", type=int, default=4, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--output-dir", type=click.Path(file_okay=False), default=None)
@handle_errors
def visualize_ssl_command(checkpoint, images, ssl_task, ssl_ratio, count, seed, output_dir):
    """Original / transformed input / SSL prediction panels as PNG."""
    stored = load_checkpoint(checkpoint)
    model = stored.build_model()
    if stored.ssl is None:
        raise ConfigurationError(f"{checkpoint} has no SSL head to visualise")
    kind = SSLTaskKind.parse(ssl_task) if ssl_task else stored.ssl.kind
    if kind is not stored.ssl.kind:
        raise ConfigurationError(f"checkpoint has a {stored.ssl.kind.value} head, not {kind.value}")
    task = SSLTaskConfig(kind, stored.ssl.ratio if ssl_ratio is None else ssl_ratio, stored.ssl.tokenizer)

    folder = load_image_folder(images)
    size = (model.config.image_size, model.config.image_size)
    records = folder.images[:count]
    batch = torch.stack([resize_image(to_tensor_image(record.load_pixels()), size) for record in records])
    output_dir = Path(output_dir) if output_dir else Path(checkpoint).parent / "ssl_panels"
    written = visualize_ssl(model, batch, task, output_dir, names=[f"{record.id:04d}" for record in records],
                            generator=torch.Generator().manual_seed(seed))
    click.echo(f"🖼️ Wrote {len(written)} panels to {output_dir}")


@cli.command()
@click.option("--output-dir", type=click.Path(file_okay=False), required=True)
@click.option("--num-images", type=int, default=500, show_default=True)
@click.option("--num-val", type=int, default=100, show_default=True)
@click.option("--image-size", type=int, default=128, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@handle_errors
def synthesize(output_dir, num_images, num_val, image_size, seed):
    """Write the synthetic shapes dataset as PNG files plus COCO JSON."""
    train, val = synthetic_splits(SyntheticConfig(num_images=num_images, image_size=image_size, seed=seed), num_val)
    root = Path(output_dir)
    for name, dataset in (("train", train), ("val", val)):
        if dataset is None:
            continue
        write_images(dataset, root / name)
        export_coco(dataset, root / f"{name}.json")
        click.echo(f"✅ {name}: {len(dataset)} images, {dataset.num_annotations} boxes")
    click.echo(f"💾 Dataset written to {root}")


if __name__ == "__main__":
    cli(obj={})
