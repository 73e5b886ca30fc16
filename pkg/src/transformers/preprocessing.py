"""
Image preparation: uint8 arrays to [0, 1] tensors, resizing to a grid-aligned
size, and ImageNet normalisation applied only at the network-input boundary.
"""
from dataclasses import dataclass
from typing import Optional, Tuple, Union

import numpy as np
import torch
import torch.nn.functional as F

from src.errors import DimensionError, ShapeError

IMAGENET_MEAN = (0.485, 0.456, 0.406)
IMAGENET_STD = (0.229, 0.224, 0.225)


@dataclass
class ModelInput:
    pixels: torch.Tensor        # raw [0, 1] pixels, CxHxW, used as SSL targets
    normalized: torch.Tensor    # network input
    boxes: Optional[torch.Tensor] = None  # normalized (cx, cy, w, h)


def to_tensor_image(array: np.ndarray) -> torch.Tensor:
    """HxWxC uint8 (or HxW grayscale) -> float CxHxW in [0, 1]"""
    if array.ndim == 2:
        array = np.stack([array] * 3, axis=-1)
    if array.ndim != 3:
        raise ShapeError(f"expected HxWxC image array, got shape {array.shape}")
    tensor = torch.from_numpy(np.ascontiguousarray(array)).permute(2, 0, 1)
    if array.dtype == np.uint8:
        return tensor.float() / 255.0
    return tensor.float()


def normalize(pixels: torch.Tensor) -> torch.Tensor:
    """ImageNet mean/std normalisation for CxHxW or BxCxHxW tensors"""
    mean = torch.tensor(IMAGENET_MEAN, dtype=pixels.dtype, device=pixels.device)
    std = torch.tensor(IMAGENET_STD, dtype=pixels.dtype, device=pixels.device)
    shape = (-1, 1, 1) if pixels.dim() == 3 else (1, -1, 1, 1)
    return (pixels - mean.view(shape)) / std.view(shape)


def resize_image(pixels: torch.Tensor, size: Tuple[int, int]) -> torch.Tensor:
    if tuple(pixels.shape[-2:]) == tuple(size):
        return pixels
    resized = F.interpolate(pixels.unsqueeze(0), size=size, mode="bilinear", align_corners=False)
    return resized.squeeze(0).clamp(0.0, 1.0)


def resize_and_normalize(pixels: torch.Tensor, target_size: Union[int, Tuple[int, int]],
                         downsampling_factor: int,
                         boxes: Optional[torch.Tensor] = None) -> ModelInput:
    """Bilinear resize to a size divisible by the factor, then normalise a copy"""
    if isinstance(target_size, int):
        target_size = (target_size, target_size)
    height, width = target_size
    if height % downsampling_factor:
        raise DimensionError("height", height, downsampling_factor)
    if width % downsampling_factor:
        raise DimensionError("width", width, downsampling_factor)
    resized = resize_image(pixels, (height, width))
    # normalized (cx, cy, w, h) boxes are invariant to resizing
    return ModelInput(pixels=resized, normalized=normalize(resized),
                      boxes=None if boxes is None else boxes.clone())
