"""
Typed records shared by the detector, the loss and the evaluator.
"""
from dataclasses import dataclass
from typing import Optional

import torch

from src.errors import ConfigurationError, ShapeError
from src.transformers.patch_grid import PatchGrid, compute_grid


@dataclass(frozen=True)
class BackboneConfig:
    downsampling_factor: int = 32
    feature_dim: int = 128
    kind: str = "conv"  # "conv" or "stub"
    pretrained_weights: Optional[str] = None

    def __post_init__(self):
        f = self.downsampling_factor
        if f < 1 or f & (f - 1):
            raise ConfigurationError(f"downsampling_factor must be a power of two, got {f}")
        if self.kind not in ("conv", "stub"):
            raise ConfigurationError(f"backbone kind must be 'conv' or 'stub', got '{self.kind}'")
        if self.feature_dim < 1:
            raise ConfigurationError(f"feature_dim must be positive, got {self.feature_dim}")


@dataclass(frozen=True)
class DetectorConfig:
    num_classes: int = 3
    num_queries: int = 100
    hidden_dim: int = 64
    attention_heads: int = 4
    encoder_layers: int = 2
    decoder_layers: int = 2
    feedforward_dim: int = 128
    dropout: float = 0.0
    image_size: int = 512

    def __post_init__(self):
        if self.hidden_dim % self.attention_heads:
            raise ConfigurationError(
                f"hidden_dim {self.hidden_dim} not divisible by attention_heads {self.attention_heads}"
            )
        if self.hidden_dim % 2:
            raise ConfigurationError(f"hidden_dim must be even, got {self.hidden_dim}")
        if self.num_queries < 1:
            raise ConfigurationError(f"num_queries must be positive, got {self.num_queries}")
        if self.num_classes < 1:
            raise ConfigurationError(f"num_classes must be positive, got {self.num_classes}")

    def grid(self, backbone: BackboneConfig) -> PatchGrid:
        return compute_grid(self.image_size, self.image_size, backbone.downsampling_factor)


@dataclass
class EncoderTokens:
    tokens: torch.Tensor  # (B, num_patches, hidden_dim), token p <-> patch p
    grid: PatchGrid

    def __post_init__(self):
        if self.tokens.dim() != 3 or self.tokens.shape[1] != self.grid.num_patches:
            raise ShapeError(
                f"expected (B, {self.grid.num_patches}, D) tokens, got {tuple(self.tokens.shape)}"
            )


@dataclass
class DetectionSet:
    class_logits: torch.Tensor  # (B, Q, num_classes + 1); last column is no-object
    boxes: torch.Tensor         # (B, Q, 4) normalized (cx, cy, w, h)

    @property
    def batch_size(self) -> int:
        return self.class_logits.shape[0]

    @property
    def num_queries(self) -> int:
        return self.class_logits.shape[1]

    @property
    def num_classes(self) -> int:
        return self.class_logits.shape[2] - 1

    def image(self, index: int) -> "DetectionSet":
        """Single-image view keeping a batch dimension of one"""
        return DetectionSet(self.class_logits[index:index + 1], self.boxes[index:index + 1])

    def detach(self) -> "DetectionSet":
        return DetectionSet(self.class_logits.detach(), self.boxes.detach())
