"""
Convolutional backbones whose total stride equals the downsampling factor.
"""
import logging
import math

import torch
from torch import nn

from src.errors import CheckpointError
from src.models.base import BackboneConfig

logger = logging.getLogger(__name__)


def _conv_block(in_channels: int, out_channels: int, stride: int) -> nn.Sequential:
    return nn.Sequential(
        nn.Conv2d(in_channels, out_channels, kernel_size=3, stride=stride, padding=1, bias=False),
        nn.GroupNorm(math.gcd(8, out_channels), out_channels),
        nn.ReLU(inplace=True),
    )


class ConvBackbone(nn.Module):
    """Stem plus stride-2 stages; log2(f) stride-2 convolutions in total"""

    def __init__(self, config: BackboneConfig, in_channels: int = 3):
        super().__init__()
        num_down = int(math.log2(config.downsampling_factor))
        self.num_channels = config.feature_dim
        if num_down == 0:
            self.body = _conv_block(in_channels, config.feature_dim, stride=1)
            return
        widths = [min(config.feature_dim, 16 * 2 ** i) for i in range(num_down)]
        widths[-1] = config.feature_dim
        layers = []
        previous = in_channels
        for width in widths:
            layers.append(_conv_block(previous, width, stride=2))
            previous = width
        self.body = nn.Sequential(*layers)

    def forward(self, images: torch.Tensor) -> torch.Tensor:
        return self.body(images)


class StubBackbone(nn.Module):
    """Single f-strided average pool: feature cell (r, c) is the mean of patch (r, c)"""

    def __init__(self, config: BackboneConfig, in_channels: int = 3):
        super().__init__()
        self.num_channels = in_channels
        self.pool = nn.AvgPool2d(kernel_size=config.downsampling_factor, stride=config.downsampling_factor)

    def forward(self, images: torch.Tensor) -> torch.Tensor:
        return self.pool(images)


def build_backbone(config: BackboneConfig) -> nn.Module:
    backbone = StubBackbone(config) if config.kind == "stub" else ConvBackbone(config)
    if config.pretrained_weights:
        try:
            state = torch.load(config.pretrained_weights, map_location="cpu")
        except (OSError, RuntimeError) as e:
            raise CheckpointError(config.pretrained_weights, f"cannot read backbone weights ({e})") from e
        try:
            backbone.load_state_dict(state)
        except (RuntimeError, TypeError) as e:
            raise CheckpointError(config.pretrained_weights, f"backbone weights do not fit the config ({e})") from e
        logger.info("Loaded backbone weights from %s", config.pretrained_weights)
    return backbone
