"""
Versioned checkpoint files.

A checkpoint is a plain dict: format version, the configs needed to rebuild the
network, the state dicts, the epoch and free-form metadata. Files are written
to a temporary name and renamed so a crash never leaves a torn checkpoint.
"""
import logging
import os
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Union

import torch

from src.errors import CheckpointError
from src.models.base import BackboneConfig, DetectorConfig
from src.models.detector import TRANSFER_PREFIXES, SSLDetector, build_detector
from src.transformers.ssl_tasks import SSLTaskConfig, SSLTaskKind
from src.transformers.tokenizer import ColorQuantizerTokenizer

logger = logging.getLogger(__name__)

CHECKPOINT_FORMAT_VERSION = 1
PathLike = Union[str, Path]


def ssl_config_to_dict(config: Optional[SSLTaskConfig]) -> Optional[Dict[str, Any]]:
    if config is None:
        return None
    bins = getattr(config.tokenizer, "bins_per_channel", None)
    return {"kind": config.kind.value, "ratio": float(config.ratio), "tokenizer_bins": bins}


def ssl_config_from_dict(data: Optional[Dict[str, Any]]) -> Optional[SSLTaskConfig]:
    if data is None:
        return None
    kind = SSLTaskKind.parse(data["kind"])
    tokenizer = None
    if kind is SSLTaskKind.MIM_DISCRETE:
        tokenizer = ColorQuantizerTokenizer(data.get("tokenizer_bins") or 8)
    return SSLTaskConfig(kind, float(data["ratio"]), tokenizer)


@dataclass
class Checkpoint:
    detector: DetectorConfig
    backbone: BackboneConfig
    ssl: Optional[SSLTaskConfig]
    model_state: Dict[str, torch.Tensor]
    optimizer_state: Optional[Dict[str, Any]] = None
    epoch: int = 0
    metadata: Dict[str, Any] = field(default_factory=dict)
    path: Optional[str] = None

    def build_model(self) -> SSLDetector:
        model = build_detector(self.detector, self.backbone, self.ssl)
        try:
            model.load_state_dict(self.model_state)
        except RuntimeError as e:
            raise CheckpointError(self.path or "<memory>", f"state dict does not fit the stored config ({e})") from e
        return model


def save_checkpoint(path: PathLike, model: SSLDetector, optimizer: Optional[torch.optim.Optimizer] = None,
                    epoch: int = 0, ssl_config: Optional[SSLTaskConfig] = None,
                    metadata: Optional[Dict[str, Any]] = None) -> Path:
    path = Path(path)
    payload = {
        "format_version": CHECKPOINT_FORMAT_VERSION,
        "detector": asdict(model.config),
        "backbone": asdict(model.backbone_config),
        "ssl": ssl_config_to_dict(ssl_config),
        "model_state": model.state_dict(),
        "optimizer_state": None if optimizer is None else optimizer.state_dict(),
        "epoch": int(epoch),
        "metadata": dict(metadata or {}),
    }
    tmp_path = path.with_name(path.name + ".tmp")
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        torch.save(payload, tmp_path)
        os.replace(tmp_path, path)
    except (OSError, RuntimeError) as e:
        raise CheckpointError(path, f"cannot write checkpoint ({e})") from e
    logger.debug("Saved checkpoint %s (epoch %d)", path, epoch)
    return path


def load_checkpoint(path: PathLike) -> Checkpoint:
    path = Path(path)
    try:
        payload = torch.load(path, map_location="cpu", weights_only=True)
    except FileNotFoundError as e:
        raise CheckpointError(path, "checkpoint not found") from e
    except (OSError, RuntimeError, EOFError) as e:
        raise CheckpointError(path, f"cannot read checkpoint ({e})") from e
    if not isinstance(payload, dict) or "format_version" not in payload:
        raise CheckpointError(path, "not a checkpoint file")
    version = payload["format_version"]
    if version > CHECKPOINT_FORMAT_VERSION:
        raise CheckpointError(path, f"checkpoint format {version} is newer than supported {CHECKPOINT_FORMAT_VERSION}")
    try:
        return Checkpoint(
            detector=DetectorConfig(**payload["detector"]),
            backbone=BackboneConfig(**payload["backbone"]),
            ssl=ssl_config_from_dict(payload.get("ssl")),
            model_state=payload["model_state"],
            optimizer_state=payload.get("optimizer_state"),
            epoch=int(payload.get("epoch", 0)),
            metadata=dict(payload.get("metadata") or {}),
            path=str(path),
        )
    except (KeyError, TypeError) as e:
        raise CheckpointError(path, f"checkpoint is missing fields ({e})") from e


def load_transfer_weights(model: SSLDetector, checkpoint: Union[Checkpoint, PathLike]) -> List[str]:
    """Copy backbone, input projection and encoder weights; everything else stays fresh"""
    if not isinstance(checkpoint, Checkpoint):
        checkpoint = load_checkpoint(checkpoint)
    own = model.state_dict()
    transferred = {}
    for name, tensor in checkpoint.model_state.items():
        if not name.startswith(TRANSFER_PREFIXES):
            continue
        if name not in own or own[name].shape != tensor.shape:
            raise CheckpointError(checkpoint.path or "<memory>",
                                  f"parameter {name} does not match the model being initialised")
        transferred[name] = tensor
    missing = [name for name in own if name.startswith(TRANSFER_PREFIXES) and name not in transferred]
    if missing:
        raise CheckpointError(checkpoint.path or "<memory>", f"checkpoint lacks {len(missing)} encoder-side tensors")
    model.load_state_dict(transferred, strict=False)
    logger.info("Transferred %d tensors from %s", len(transferred), checkpoint.path)
    return sorted(transferred)
