"""
Single optimisation steps for the three training strategies.

All steps share one update path (zero grads, backward, clip the global norm,
step), so a multi-task step whose SSL weight is zero performs exactly the same
operations as a plain detection step.
"""
from dataclasses import dataclass
from typing import Dict, Iterable, List, Optional, Sequence

import torch

from src.errors import ConfigurationError, DatasetError, RangeError
from src.loaders.batch_loader import Batch
from src.matching.criterion import DetectionLoss, match_and_loss
from src.matching.hungarian import LossWeights
from src.models.detector import SSLDetector
from src.pipelines.scheduler import SSLWeightSchedule, ssl_weight
from src.transformers.preprocessing import normalize
from src.transformers.ssl_tasks import SSLSample, SSLTaskConfig, batch_ssl_loss, make_ssl_sample


@dataclass(frozen=True)
class OptimConfig:
    optimizer: str = "adamw"
    learning_rate: float = 1e-4
    weight_decay: float = 1e-4
    batch_size: int = 8
    grad_clip_norm: float = 0.1
    epochs: int = 10

    def __post_init__(self):
        if self.optimizer.lower() != "adamw":
            raise ConfigurationError(f"unsupported optimizer '{self.optimizer}', only adamw")
        if self.learning_rate < 0 or self.weight_decay < 0:
            raise RangeError("learning_rate and weight_decay must be >= 0")
        if self.batch_size < 1 or self.epochs < 0:
            raise RangeError("batch_size must be >= 1 and epochs >= 0")
        if self.grad_clip_norm <= 0:
            raise RangeError(f"grad_clip_norm must be > 0, got {self.grad_clip_norm}")


def build_optimizer(parameters: Iterable[torch.nn.Parameter], config: OptimConfig) -> torch.optim.Optimizer:
    return torch.optim.AdamW(list(parameters), lr=config.learning_rate, weight_decay=config.weight_decay)


def _apply_update(loss: torch.Tensor, parameters: List[torch.nn.Parameter],
                  optimizer: torch.optim.Optimizer, grad_clip_norm: float) -> float:
    """One update; returns the global gradient norm before clipping"""
    optimizer.zero_grad(set_to_none=True)
    loss.backward()
    norm = torch.nn.utils.clip_grad_norm_(parameters, grad_clip_norm)
    optimizer.step()
    return float(norm)


def make_ssl_batch(images: torch.Tensor, task: SSLTaskConfig, model: SSLDetector,
                   generator: Optional[torch.Generator] = None) -> Sequence[SSLSample]:
    grid = model.grid_for(images)
    return [make_ssl_sample(task, image, grid, generator) for image in images]


def compute_ssl_loss(model: SSLDetector, images: torch.Tensor, task: SSLTaskConfig,
                     generator: Optional[torch.Generator] = None) -> torch.Tensor:
    """Transform raw images, predict from the transformed input, score on loss_indices"""
    samples = make_ssl_batch(images, task, model, generator)
    inputs = torch.stack([sample.input_image for sample in samples])
    prediction = model.predict_ssl(normalize(inputs), task.kind)
    return batch_ssl_loss(prediction, samples, model.grid_for(images))


def compute_detection_loss(model: SSLDetector, batch: Batch,
                           weights: LossWeights = LossWeights()) -> DetectionLoss:
    if len(batch.targets) != len(batch):
        raise DatasetError("batch carries no detection annotations")
    return match_and_loss(model(normalize(batch.images)), batch.targets, weights)


def pretrain_step(model: SSLDetector, images: torch.Tensor, task: SSLTaskConfig,
                  optimizer: torch.optim.Optimizer, grad_clip_norm: float = 0.1,
                  generator: Optional[torch.Generator] = None) -> Dict[str, float]:
    """SSL-only update; the optimizer should hold model.ssl_parameters()"""
    loss = compute_ssl_loss(model, images, task, generator)
    grad_norm = _apply_update(loss, list(model.ssl_parameters()), optimizer, grad_clip_norm)
    value = float(loss.detach())
    return {"loss": value, "ssl_loss": value, "grad_norm": grad_norm}


def detection_step(model: SSLDetector, batch: Batch, optimizer: torch.optim.Optimizer,
                   grad_clip_norm: float = 0.1, weights: LossWeights = LossWeights()) -> Dict[str, float]:
    det = compute_detection_loss(model, batch, weights)
    grad_norm = _apply_update(det.total, list(model.parameters()), optimizer, grad_clip_norm)
    metrics = det.as_floats()
    metrics.update(loss=metrics["detection_loss"], grad_norm=grad_norm)
    return metrics


def multitask_step(model: SSLDetector, batch: Batch, task: SSLTaskConfig, schedule: SSLWeightSchedule,
                   optimizer: torch.optim.Optimizer, step: int, grad_clip_norm: float = 0.1,
                   weights: LossWeights = LossWeights(),
                   generator: Optional[torch.Generator] = None) -> Dict[str, float]:
    """Clean image -> detection loss, transformed image -> SSL loss, one shared update"""
    weight = ssl_weight(schedule, step)
    det = compute_detection_loss(model, batch, weights)
    if weight == 0:
        total = det.total
        ssl_value = 0.0
    else:
        ssl = compute_ssl_loss(model, batch.images, task, generator)
        total = det.total + weight * ssl
        ssl_value = float(ssl.detach())
    grad_norm = _apply_update(total, list(model.parameters()), optimizer, grad_clip_norm)

    metrics = det.as_floats()
    weighted = weight * ssl_value
    metrics.update(
        ssl_loss=ssl_value,
        ssl_weight=float(weight),
        weighted_ssl_loss=weighted,
        loss=metrics["detection_loss"] + weighted,
        grad_norm=grad_norm,
    )
    return metrics
