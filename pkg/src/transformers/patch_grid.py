"""
Patch grid geometry.

An image is cut into square patches whose side equals the backbone's
downsampling factor, so patch p lines up with encoder token p (row-major).
"""
import math
from dataclasses import dataclass
from typing import Optional, Tuple

import torch

from src.errors import DimensionError, RangeError, ShapeError


@dataclass(frozen=True)
class PatchGrid:
    """Pixel <-> patch <-> feature-cell geometry for one image size"""

    image_height: int
    image_width: int
    patch_size: int

    @property
    def rows(self) -> int:
        return self.image_height // self.patch_size

    @property
    def cols(self) -> int:
        return self.image_width // self.patch_size

    @property
    def num_patches(self) -> int:
        return self.rows * self.cols

    def row_col(self, index: int) -> Tuple[int, int]:
        if not 0 <= index < self.num_patches:
            raise RangeError(f"patch index {index} outside [0, {self.num_patches})")
        return index // self.cols, index % self.cols

    def index(self, row: int, col: int) -> int:
        if not (0 <= row < self.rows and 0 <= col < self.cols):
            raise RangeError(f"cell ({row}, {col}) outside {self.rows}x{self.cols} grid")
        return row * self.cols + col


@dataclass(frozen=True)
class PatchSelection:
    grid: PatchGrid
    indices: Tuple[int, ...]
    ratio: float

    def __len__(self) -> int:
        return len(self.indices)


@dataclass(frozen=True)
class PatchPermutation:
    """mapping[i] is the destination slot of source slot i, both within the selection"""

    selection: PatchSelection
    mapping: Tuple[int, ...]

    def inverse(self) -> "PatchPermutation":
        inverse = [0] * len(self.mapping)
        for source, destination in enumerate(self.mapping):
            inverse[destination] = source
        return PatchPermutation(self.selection, tuple(inverse))

    def is_identity(self) -> bool:
        return all(source == destination for source, destination in enumerate(self.mapping))


def compute_grid(image_height: int, image_width: int, downsampling_factor: int) -> PatchGrid:
    """Grid for an image whose sides are exact multiples of the factor"""
    for name, value in (("height", image_height), ("width", image_width),
                        ("downsampling factor", downsampling_factor)):
        if value <= 0:
            raise RangeError(f"{name} must be positive, got {value}")
    if image_height % downsampling_factor:
        raise DimensionError("height", image_height, downsampling_factor)
    if image_width % downsampling_factor:
        raise DimensionError("width", image_width, downsampling_factor)
    return PatchGrid(image_height, image_width, downsampling_factor)


def extract_patches(image: torch.Tensor, grid: PatchGrid) -> torch.Tensor:
    """CxHxW image -> (num_patches, C, f, f) in row-major patch order"""
    if image.dim() != 3 or tuple(image.shape[1:]) != (grid.image_height, grid.image_width):
        raise ShapeError(
            f"expected CxHxW image with H,W = {grid.image_height},{grid.image_width}, "
            f"got {tuple(image.shape)}"
        )
    channels = image.shape[0]
    f = grid.patch_size
    patches = image.reshape(channels, grid.rows, f, grid.cols, f)
    return patches.permute(1, 3, 0, 2, 4).reshape(grid.num_patches, channels, f, f)


def reassemble_patches(patches: torch.Tensor, grid: PatchGrid) -> torch.Tensor:
    """Exact inverse of extract_patches"""
    f = grid.patch_size
    if patches.dim() != 4 or patches.shape[0] != grid.num_patches or tuple(patches.shape[2:]) != (f, f):
        raise ShapeError(
            f"expected ({grid.num_patches}, C, {f}, {f}) patches, got {tuple(patches.shape)}"
        )
    channels = patches.shape[1]
    image = patches.reshape(grid.rows, grid.cols, channels, f, f)
    return image.permute(2, 0, 3, 1, 4).reshape(channels, grid.image_height, grid.image_width)


def selection_count(ratio: float, num_patches: int) -> int:
    # round half up
    return int(math.floor(ratio * num_patches + 0.5))


def sample_selection(grid: PatchGrid, ratio: float,
                     generator: Optional[torch.Generator] = None) -> PatchSelection:
    """round(ratio * num_patches) distinct patch indices, uniformly without replacement"""
    if not 0.0 <= ratio <= 1.0:
        raise RangeError(f"ratio must be in [0, 1], got {ratio}")
    count = selection_count(ratio, grid.num_patches)
    order = torch.randperm(grid.num_patches, generator=generator)
    return PatchSelection(grid, tuple(int(i) for i in order[:count]), float(ratio))


def sample_permutation(selection: PatchSelection,
                       generator: Optional[torch.Generator] = None) -> PatchPermutation:
    """Uniform bijection over the selection's slots, never the identity when k >= 2"""
    k = len(selection)
    if k < 2:
        return PatchPermutation(selection, tuple(range(k)))
    while True:
        mapping = tuple(int(i) for i in torch.randperm(k, generator=generator))
        if any(source != destination for source, destination in enumerate(mapping)):
            return PatchPermutation(selection, mapping)


def apply_permutation(patches: torch.Tensor, permutation: PatchPermutation) -> torch.Tensor:
    """Move the patch in selection slot i to selection slot mapping[i]"""
    indices = permutation.selection.indices
    if not indices:
        return patches.clone()
    source = torch.tensor(indices, dtype=torch.long)
    destination = source[torch.tensor(permutation.mapping, dtype=torch.long)]
    moved = patches.clone()
    moved[destination] = patches[source]
    return moved


def selection_mask(selection: PatchSelection) -> torch.Tensor:
    """Boolean vector over all patches, True where selected"""
    mask = torch.zeros(selection.grid.num_patches, dtype=torch.bool)
    if selection.indices:
        mask[list(selection.indices)] = True
    return mask
