"""
Run configuration: a versioned YAML file, optionally overridden by CLI flags.

Every section is a pydantic model that forbids unknown keys. Field errors are
collected in one pass, cross-section rules in a second one; both end up as
(dotted.path, message) pairs in a single ConfigValidationError.
"""
import logging
from enum import Enum
from pathlib import Path
from typing import Any, Dict, List, Literal, Mapping, Optional, Tuple, Union

import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from src.errors import ConfigValidationError, SSLDetrError
from src.matching.hungarian import LossWeights
from src.models.base import BackboneConfig, DetectorConfig
from src.pipelines.scheduler import ScheduleMode, SSLWeightSchedule
from src.transformers.ssl_tasks import SSLTaskConfig, SSLTaskKind
from src.transformers.tokenizer import ColorQuantizerTokenizer

logger = logging.getLogger(__name__)

SCHEMA_VERSION = 1


class TrainingMode(str, Enum):
    PRETRAIN = "pretrain"
    FINETUNE = "finetune"
    MULTITASK = "multitask"

    @classmethod
    def parse(cls, value: str) -> "TrainingMode":
        value = value.strip().lower()
        if value == "plain":
            return cls.FINETUNE
        return cls(value)


class Section(BaseModel):
    model_config = ConfigDict(extra="forbid")

    @model_validator(mode="before")
    @classmethod
    def _empty_is_default(cls, data):
        # a bare `data:` line in YAML loads as None
        return {} if data is None else data


class SyntheticSection(Section):
    num_images: int = Field(500, ge=1)
    num_val: int = Field(100, ge=0)
    classes: Tuple[str, ...] = ("circle", "square", "triangle")
    objects_per_image: Tuple[int, int] = (1, 3)
    size_range: Tuple[int, int] = (16, 40)


class DataSection(Section):
    kind: Literal["synthetic", "coco", "folder"] = "synthetic"
    image_size: int = Field(128, gt=0)
    train_annotations: Optional[str] = None
    train_images: Optional[str] = None
    val_annotations: Optional[str] = None
    val_images: Optional[str] = None
    image_folder: Optional[str] = None
    synthetic: SyntheticSection = Field(default_factory=SyntheticSection)


class BackboneSection(Section):
    kind: Literal["conv", "stub"] = "conv"
    downsampling_factor: int = Field(16, gt=0)
    feature_dim: int = Field(64, gt=0)
    pretrained_weights: Optional[str] = None


class DetectorSection(Section):
    num_queries: int = Field(10, gt=0)
    hidden_dim: int = Field(64, gt=0)
    attention_heads: int = Field(4, gt=0)
    encoder_layers: int = Field(2, ge=0)
    decoder_layers: int = Field(2, gt=0)
    feedforward_dim: int = Field(128, gt=0)
    dropout: float = Field(0.0, ge=0.0, lt=1.0)


class ModelSection(Section):
    backbone: BackboneSection = Field(default_factory=BackboneSection)
    detector: DetectorSection = Field(default_factory=DetectorSection)


class OptimSection(Section):
    optimizer: Literal["adamw"] = "adamw"
    learning_rate: float = Field(1e-4, ge=0.0)
    weight_decay: float = Field(1e-4, ge=0.0)
    batch_size: int = Field(8, ge=1)
    grad_clip_norm: float = Field(0.1, gt=0.0)
    epochs: int = Field(10, ge=1)

    @field_validator("optimizer", mode="before")
    @classmethod
    def _lower(cls, value):
        return value.lower() if isinstance(value, str) else value


class ScheduleSection(Section):
    mode: Literal["constant", "linear"] = "constant"
    initial_weight: float = Field(1.0, ge=0.0)
    final_weight: float = Field(0.0, ge=0.0)


class SSLSection(Section):
    task: Optional[str] = None
    ratio: float = Field(0.5, ge=0.0, le=1.0)
    tokenizer_bins: int = Field(8, ge=1)
    schedule: ScheduleSection = Field(default_factory=ScheduleSection)

    @field_validator("task")
    @classmethod
    def _known_task(cls, value: Optional[str]) -> Optional[str]:
        return None if value is None else SSLTaskKind.parse(value).value


class LossSection(Section):
    w_class: float = Field(1.0, ge=0.0)
    w_l1: float = Field(5.0, ge=0.0)
    w_giou: float = Field(2.0, ge=0.0)
    no_object: float = Field(0.1, ge=0.0)


class TrainingSection(Section):
    mode: Literal["pretrain", "finetune", "multitask"] = "finetune"
    init: Optional[str] = None
    eval_every: int = Field(1, ge=0)

    @field_validator("mode", mode="before")
    @classmethod
    def _alias(cls, value):
        if not isinstance(value, str):
            return value
        try:
            return TrainingMode.parse(value).value
        except ValueError:
            raise ValueError("must be one of pretrain, finetune (plain), multitask") from None


class ExperimentConfig(Section):
    schema_version: int = Field(SCHEMA_VERSION, ge=1)
    seed: int = Field(0, ge=0)
    output_dir: Optional[str] = None
    data: DataSection = Field(default_factory=DataSection)
    model: ModelSection = Field(default_factory=ModelSection)
    optim: OptimSection = Field(default_factory=OptimSection)
    ssl: SSLSection = Field(default_factory=SSLSection)
    loss: LossSection = Field(default_factory=LossSection)
    training: TrainingSection = Field(default_factory=TrainingSection)

    @field_validator("schema_version")
    @classmethod
    def _supported(cls, value: int) -> int:
        if value > SCHEMA_VERSION:
            raise ValueError(f"{value} is newer than supported {SCHEMA_VERSION}")
        return value

    @property
    def mode(self) -> TrainingMode:
        return TrainingMode(self.training.mode)

    def backbone_config(self) -> BackboneConfig:
        return BackboneConfig(**self.model.backbone.model_dump())

    def detector_config(self, num_classes: int) -> DetectorConfig:
        return DetectorConfig(num_classes=num_classes, image_size=self.data.image_size,
                              **self.model.detector.model_dump())

    def ssl_config(self) -> Optional[SSLTaskConfig]:
        if self.ssl.task is None:
            return None
        kind = SSLTaskKind.parse(self.ssl.task)
        tokenizer = ColorQuantizerTokenizer(self.ssl.tokenizer_bins) if kind is SSLTaskKind.MIM_DISCRETE else None
        return SSLTaskConfig(kind, self.ssl.ratio, tokenizer)

    def weight_schedule(self, total_steps: int) -> SSLWeightSchedule:
        schedule = self.ssl.schedule
        return SSLWeightSchedule(schedule.initial_weight, ScheduleMode(schedule.mode),
                                 schedule.final_weight, total_steps)

    def loss_weights(self) -> LossWeights:
        return LossWeights(**self.loss.model_dump())

    def to_dict(self) -> Dict[str, Any]:
        return self.model_dump(mode="json")


_TYPE_NAMES = {"int": "int", "float": "float", "string": "str", "bool": "bool", "tuple": "list", "list": "list"}


def _dotted(loc: Tuple[Union[str, int], ...]) -> str:
    path = ""
    for part in loc:
        if isinstance(part, int):
            path += f"[{part}]"
        else:
            path = f"{path}.{part}" if path else str(part)
    return path or "<root>"


def _message(error: Mapping[str, Any]) -> str:
    kind = error["type"]
    if kind == "extra_forbidden":
        return "unknown key"
    if kind in ("model_type", "model_attributes_type", "dict_type"):
        return "must be a mapping"
    if kind == "value_error":
        return str(error["ctx"]["error"])
    prefix, _, suffix = kind.partition("_")
    if suffix in ("type", "parsing") and prefix in _TYPE_NAMES:
        return f"expected {_TYPE_NAMES[prefix]}, got {type(error['input']).__name__}"
    return error["msg"]


def field_errors(error: ValidationError) -> List[Tuple[str, str]]:
    """pydantic errors as (dotted.path, message) pairs"""
    return [(_dotted(item["loc"]), _message(item)) for item in error.errors()]


def _check(errors: List[Tuple[str, str]], path: str, build) -> None:
    try:
        build()
    except (SSLDetrError, ValueError) as e:
        errors.append((path, str(e)))


def validate_experiment(config: ExperimentConfig) -> List[Tuple[str, str]]:
    """Rules that span fields or sections; runs on a config whose fields are valid"""
    errors: List[Tuple[str, str]] = []
    data = config.data
    if data.kind == "coco" and not data.train_annotations:
        errors.append(("data.train_annotations", "required when data.kind is coco"))
    if data.kind == "folder" and not data.image_folder:
        errors.append(("data.image_folder", "required when data.kind is folder"))

    before = len(errors)
    _check(errors, "model.backbone", config.backbone_config)
    if len(errors) == before:
        factor = config.model.backbone.downsampling_factor
        if data.image_size % factor:
            errors.append(("data.image_size", f"{data.image_size} is not divisible by downsampling factor {factor}"))
    _check(errors, "model.detector", lambda: config.detector_config(num_classes=1))

    if config.ssl.task is not None:
        _check(errors, "ssl.task", config.ssl_config)
    _check(errors, "ssl.schedule", lambda: config.weight_schedule(0))

    mode = config.mode
    if mode in (TrainingMode.PRETRAIN, TrainingMode.MULTITASK) and config.ssl.task is None:
        errors.append(("ssl.task", f"required in {mode.value} mode"))
    if mode is TrainingMode.PRETRAIN and config.ssl.task is not None:
        kind = SSLTaskKind.parse(config.ssl.task)
        if kind.uses_ratio and config.ssl.ratio == 0:
            errors.append(("ssl.ratio", f"ratio 0 makes {kind.value} a zero-loss task"))
    if mode is not TrainingMode.PRETRAIN and data.kind == "folder":
        errors.append(("data.kind", f"{mode.value} needs annotations; image folders are unlabeled"))
    return errors


def set_dotted(raw: Dict[str, Any], dotted: str, value: Any) -> None:
    node = raw
    keys = dotted.split(".")
    for key in keys[:-1]:
        child = node.get(key)
        if not isinstance(child, dict):
            child = {}
            node[key] = child
        node = child
    node[keys[-1]] = value


def read_yaml(path: Union[str, Path]) -> Dict[str, Any]:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as e:
        raise ConfigValidationError([(str(path), f"cannot read config file: {e}")]) from e
    try:
        raw = yaml.safe_load(text)
    except yaml.YAMLError as e:
        raise ConfigValidationError([(str(path), f"invalid YAML: {e}")]) from e
    if raw is None:
        return {}
    if not isinstance(raw, dict):
        raise ConfigValidationError([(str(path), "top level must be a mapping")])
    return raw


def load_experiment(path: Optional[Union[str, Path]] = None,
                    overrides: Optional[Mapping[str, Any]] = None) -> ExperimentConfig:
    """YAML file (or defaults) plus dotted-path overrides, fully validated"""
    raw = read_yaml(path) if path is not None else {}
    for dotted, value in (overrides or {}).items():
        if value is not None:
            set_dotted(raw, dotted, value)
    try:
        config = ExperimentConfig.model_validate(raw)
    except ValidationError as e:
        raise ConfigValidationError(field_errors(e)) from None
    errors = validate_experiment(config)
    if errors:
        raise ConfigValidationError(errors)
    if config.schema_version < SCHEMA_VERSION:
        logger.warning("Config schema_version %d is older than %d", config.schema_version, SCHEMA_VERSION)
    return config


def dump_experiment(config: ExperimentConfig, path: Union[str, Path]) -> Path:
    path = Path(path)
    path.write_text(yaml.safe_dump(config.to_dict(), sort_keys=False), encoding="utf-8")
    return path
