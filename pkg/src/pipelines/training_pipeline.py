"""
Epoch loop for pre-training, fine-tuning and multi-task training.

One run directory holds `checkpoint.pt` (rewritten every epoch) and
`metrics.jsonl` (one JSON row per finished epoch). Shuffling and SSL
transforms draw from generators derived from the seed and the epoch, so a
resumed run continues exactly where an uninterrupted one would be.
"""
import json
import logging
import math
import random
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Union

import numpy as np
import torch
from tqdm import tqdm

from config.experiment import ExperimentConfig, TrainingMode
from config.settings import RUNTIME_CONFIG, progress_enabled
from src.errors import CheckpointError
from src.evaluation.predictor import evaluate_model
from src.extractors.dataset import DetectionDataset
from src.loaders.batch_loader import build_data_loader
from src.loaders.checkpoint_loader import load_checkpoint, load_transfer_weights, save_checkpoint
from src.models.detector import SSLDetector, build_detector
from src.pipelines.steps import OptimConfig, build_optimizer, detection_step, multitask_step, pretrain_step

logger = logging.getLogger(__name__)

METRICS_NAME = "metrics.jsonl"
CHECKPOINT_NAME = "checkpoint.pt"
PathLike = Union[str, Path]


@dataclass
class TrainingResult:
    model: SSLDetector
    checkpoint: Path
    metrics_path: Path
    rows: List[Dict[str, Any]]
    epoch_seconds: List[float] = field(default_factory=list)


def set_seed(seed: int) -> None:
    random.seed(seed)
    np.random.seed(seed % 2 ** 32)
    torch.manual_seed(seed)


def read_metrics(path: PathLike) -> List[Dict[str, Any]]:
    path = Path(path)
    if not path.exists():
        return []
    try:
        return [json.loads(line) for line in path.read_text(encoding="utf-8").splitlines() if line.strip()]
    except (OSError, ValueError) as e:
        raise CheckpointError(path, f"cannot read metrics log ({e})") from e


def _write_metrics(path: Path, rows: List[Dict[str, Any]]) -> None:
    try:
        path.write_text("".join(json.dumps(row, sort_keys=True) + "\n" for row in rows), encoding="utf-8")
    except OSError as e:
        raise CheckpointError(path, f"cannot write metrics log ({e})") from e


def _append_metrics(path: Path, row: Dict[str, Any]) -> None:
    try:
        with path.open("a", encoding="utf-8") as handle:
            handle.write(json.dumps(row, sort_keys=True) + "\n")
    except OSError as e:
        raise CheckpointError(path, f"cannot append to metrics log ({e})") from e


def _epoch_row(epoch: int, mode: TrainingMode, step_metrics: List[Dict[str, float]]) -> Dict[str, Any]:
    row: Dict[str, Any] = {"epoch": epoch, "mode": mode.value, "steps": len(step_metrics)}
    for key in sorted({k for metrics in step_metrics for k in metrics}):
        if key == "grad_norm":
            continue
        row[key] = math.fsum(metrics[key] for metrics in step_metrics) / len(step_metrics)
    row["max_grad_norm"] = max(metrics["grad_norm"] for metrics in step_metrics)
    return row


def build_training_model(config: ExperimentConfig, dataset: DetectionDataset) -> SSLDetector:
    mode = config.mode
    num_classes = max(dataset.num_classes, 1)
    ssl_config = None if mode is TrainingMode.FINETUNE else config.ssl_config()
    return build_detector(config.detector_config(num_classes), config.backbone_config(), ssl_config)


def run_training(config: ExperimentConfig, train: DetectionDataset, run_dir: PathLike,
                 val: Optional[DetectionDataset] = None, init_checkpoint: Optional[PathLike] = None,
                 resume: bool = False, device: Optional[str] = None) -> TrainingResult:
    mode = config.mode
    train.require_images(f"{mode.value} training")
    if mode is not TrainingMode.PRETRAIN:
        train.require_annotations(f"{mode.value} training")
    device = device or RUNTIME_CONFIG['device']
    run_dir = Path(run_dir)
    metrics_path = run_dir / METRICS_NAME
    checkpoint_path = run_dir / CHECKPOINT_NAME

    set_seed(config.seed)
    model = build_training_model(config, train)
    if init_checkpoint is not None:
        load_transfer_weights(model, init_checkpoint)
    model.to(device)

    optim = OptimConfig(**config.optim.model_dump())
    ssl_config = None if mode is TrainingMode.FINETUNE else config.ssl_config()
    parameters = model.ssl_parameters() if mode is TrainingMode.PRETRAIN else model.parameters()
    optimizer = build_optimizer(parameters, optim)

    start_epoch = 0
    rows: List[Dict[str, Any]] = []
    if resume and checkpoint_path.exists():
        checkpoint = load_checkpoint(checkpoint_path)
        model.load_state_dict(checkpoint.model_state)
        if checkpoint.optimizer_state is not None:
            optimizer.load_state_dict(checkpoint.optimizer_state)
        start_epoch = checkpoint.epoch
        rows = read_metrics(metrics_path)[:start_epoch]
        logger.info("Resuming %s at epoch %d", run_dir, start_epoch)
    _write_metrics(metrics_path, rows)

    steps_per_epoch = math.ceil(len(train) / optim.batch_size)
    # the last step of the run sees the schedule's final weight
    schedule = config.weight_schedule(max(optim.epochs * steps_per_epoch - 1, 0))
    loss_weights = config.loss_weights()
    global_step = start_epoch * steps_per_epoch
    epoch_seconds = []

    for epoch in range(start_epoch, optim.epochs):
        started = time.perf_counter()
        loader = build_data_loader(train, config.data.image_size, model.downsampling_factor,
                                   optim.batch_size, shuffle=True, seed=config.seed + epoch)
        ssl_generator = torch.Generator().manual_seed(config.seed * 1000 + epoch)
        model.train()
        step_metrics = []
        progress = tqdm(loader, desc=f"{mode.value} epoch {epoch + 1}/{optim.epochs}",
                        leave=False, disable=not progress_enabled())
        for batch in progress:
            batch = batch.to(device)
            if mode is TrainingMode.PRETRAIN:
                metrics = pretrain_step(model, batch.images, ssl_config, optimizer,
                                        optim.grad_clip_norm, ssl_generator)
            elif mode is TrainingMode.MULTITASK:
                metrics = multitask_step(model, batch, ssl_config, schedule, optimizer, global_step,
                                         optim.grad_clip_norm, loss_weights, ssl_generator)
            else:
                metrics = detection_step(model, batch, optimizer, optim.grad_clip_norm, loss_weights)
            step_metrics.append(metrics)
            global_step += 1
            progress.set_postfix(loss=f"{metrics['loss']:.4f}")

        row = _epoch_row(epoch + 1, mode, step_metrics)
        eval_every = config.training.eval_every
        if val is not None and mode is not TrainingMode.PRETRAIN and eval_every and (epoch + 1) % eval_every == 0:
            row["eval"] = evaluate_model(model, val, optim.batch_size, device).to_dict()
        rows.append(row)
        _append_metrics(metrics_path, row)
        save_checkpoint(checkpoint_path, model, optimizer, epoch + 1, ssl_config,
                        metadata={"mode": mode.value, "seed": config.seed})
        epoch_seconds.append(time.perf_counter() - started)
        logger.info("Epoch %d/%d: loss %.4f", epoch + 1, optim.epochs, row["loss"])

    if not checkpoint_path.exists():
        save_checkpoint(checkpoint_path, model, optimizer, start_epoch, ssl_config,
                        metadata={"mode": mode.value, "seed": config.seed})
    return TrainingResult(model, checkpoint_path, metrics_path, rows, epoch_seconds)
