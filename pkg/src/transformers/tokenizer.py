"""
Visual tokenizers for MIM-Discrete targets.

Any object with `vocabulary_size` and `encode(patches) -> ids` plugs in; the
default quantizes each patch's mean colour on a uniform per-channel grid.
"""
from typing import Protocol, runtime_checkable

import torch

from src.errors import ConfigurationError, ShapeError


@runtime_checkable
class VisualTokenizer(Protocol):
    vocabulary_size: int

    def encode(self, patches: torch.Tensor) -> torch.Tensor:
        """(N, C, f, f) patches -> (N,) token ids in [0, vocabulary_size)"""
        ...


class ColorQuantizerTokenizer:
    """Uniform colour quantizer over per-patch mean colour"""

    def __init__(self, bins_per_channel: int = 8, channels: int = 3):
        if bins_per_channel < 1 or channels < 1:
            raise ConfigurationError(
                f"bins_per_channel and channels must be >= 1, got {bins_per_channel}, {channels}"
            )
        self.bins_per_channel = bins_per_channel
        self.channels = channels
        self.vocabulary_size = bins_per_channel ** channels

    def encode(self, patches: torch.Tensor) -> torch.Tensor:
        if patches.dim() != 4 or patches.shape[1] != self.channels:
            raise ShapeError(
                f"expected (N, {self.channels}, f, f) patches, got {tuple(patches.shape)}"
            )
        mean_color = patches.detach().float().mean(dim=(2, 3)).clamp(0.0, 1.0)
        bins = (mean_color * self.bins_per_channel).floor().long().clamp(max=self.bins_per_channel - 1)
        ids = torch.zeros(patches.shape[0], dtype=torch.long, device=patches.device)
        for channel in range(self.channels):
            ids = ids * self.bins_per_channel + bins[:, channel]
        return ids

    def palette(self) -> torch.Tensor:
        """(vocabulary_size, C) bin-centre colour of every token"""
        ids = torch.arange(self.vocabulary_size)
        colors = torch.zeros(self.vocabulary_size, self.channels)
        for channel in reversed(range(self.channels)):
            colors[:, channel] = (ids % self.bins_per_channel).float()
            ids = ids // self.bins_per_channel
        return (colors + 0.5) / self.bins_per_channel
