"""
Self-supervised pretext tasks for the detector's encoder.

Each task turns a raw [0, 1] image into an SSLSample: the transformed input the
network sees, the supervision target, and the patch indices the loss is
restricted to. Continuous tasks regress pixels with L1, discrete tasks classify
per-token labels with cross-entropy.
"""
from dataclasses import dataclass
from enum import Enum
from typing import Optional, Sequence, Tuple

import torch
import torch.nn.functional as F

from src.errors import ConfigurationError, RangeError, ShapeError
from src.transformers.patch_grid import (
    PatchGrid,
    PatchPermutation,
    apply_permutation,
    extract_patches,
    reassemble_patches,
    sample_permutation,
    sample_selection,
)
from src.transformers.tokenizer import VisualTokenizer


class SSLTaskKind(str, Enum):
    RECONSTRUCTION = "reconstruction"
    MIM_CONTINUOUS = "mim_continuous"
    MIM_DISCRETE = "mim_discrete"
    JIGSAW_CONTINUOUS = "jigsaw_continuous"
    JIGSAW_DISCRETE = "jigsaw_discrete"

    @property
    def is_discrete(self) -> bool:
        return self in (SSLTaskKind.MIM_DISCRETE, SSLTaskKind.JIGSAW_DISCRETE)

    @property
    def uses_ratio(self) -> bool:
        return self is not SSLTaskKind.RECONSTRUCTION

    @classmethod
    def parse(cls, value: str) -> "SSLTaskKind":
        try:
            return cls(value.strip().lower().replace("-", "_"))
        except ValueError:
            choices = ", ".join(kind.value for kind in cls)
            raise ConfigurationError(f"unknown SSL task '{value}', expected one of: {choices}") from None


@dataclass(frozen=True)
class SSLTaskConfig:
    kind: SSLTaskKind
    ratio: float = 0.5
    tokenizer: Optional[VisualTokenizer] = None

    def __post_init__(self):
        if not 0.0 <= self.ratio <= 1.0:
            raise RangeError(f"SSL task ratio must be in [0, 1], got {self.ratio}")
        if self.kind is SSLTaskKind.MIM_DISCRETE and self.tokenizer is None:
            raise ConfigurationError("mim_discrete requires a visual tokenizer")
        if self.kind is not SSLTaskKind.MIM_DISCRETE and self.tokenizer is not None:
            raise ConfigurationError(f"{self.kind.value} does not take a visual tokenizer")


@dataclass(frozen=True)
class SSLSample:
    kind: SSLTaskKind
    input_image: torch.Tensor
    target: torch.Tensor
    loss_indices: Tuple[int, ...]
    permutation: Optional[PatchPermutation] = None


def make_reconstruction(image: torch.Tensor, grid: PatchGrid) -> SSLSample:
    """Unmodified input, full-image target"""
    extract_patches(image, grid)
    return SSLSample(
        kind=SSLTaskKind.RECONSTRUCTION,
        input_image=image,
        target=image,
        loss_indices=tuple(range(grid.num_patches)),
    )


def _mask_with_mean(image: torch.Tensor, grid: PatchGrid, indices: Sequence[int]) -> torch.Tensor:
    patches = extract_patches(image, grid).clone()
    if indices:
        channel_mean = image.mean(dim=(1, 2))
        patches[list(indices)] = channel_mean[:, None, None].to(patches.dtype)
    return reassemble_patches(patches, grid)


def make_mim_continuous(image: torch.Tensor, grid: PatchGrid, ratio: float,
                        generator: Optional[torch.Generator] = None) -> SSLSample:
    """Selected patches filled with the per-image per-channel mean"""
    selection = sample_selection(grid, ratio, generator)
    return SSLSample(
        kind=SSLTaskKind.MIM_CONTINUOUS,
        input_image=_mask_with_mean(image, grid, selection.indices),
        target=image,
        loss_indices=selection.indices,
    )


def make_mim_discrete(image: torch.Tensor, grid: PatchGrid, ratio: float,
                      tokenizer: Optional[VisualTokenizer],
                      generator: Optional[torch.Generator] = None) -> SSLSample:
    """Masking as MIM-Continuous; targets are token ids of the original patches"""
    if tokenizer is None:
        raise ConfigurationError("mim_discrete requires a visual tokenizer")
    selection = sample_selection(grid, ratio, generator)
    original = extract_patches(image, grid)
    if selection.indices:
        tokens = tokenizer.encode(original[list(selection.indices)])
    else:
        tokens = torch.zeros(0, dtype=torch.long)
    return SSLSample(
        kind=SSLTaskKind.MIM_DISCRETE,
        input_image=_mask_with_mean(image, grid, selection.indices),
        target=tokens.long(),
        loss_indices=selection.indices,
    )


def _shuffle(image: torch.Tensor, grid: PatchGrid, ratio: float,
             generator: Optional[torch.Generator]) -> Tuple[torch.Tensor, PatchPermutation]:
    selection = sample_selection(grid, ratio, generator)
    permutation = sample_permutation(selection, generator)
    shuffled = apply_permutation(extract_patches(image, grid), permutation)
    return reassemble_patches(shuffled, grid), permutation


def make_jigsaw_continuous(image: torch.Tensor, grid: PatchGrid, ratio: float,
                           generator: Optional[torch.Generator] = None) -> SSLSample:
    """Selected patches permuted among themselves; target is the original image"""
    shuffled, permutation = _shuffle(image, grid, ratio, generator)
    return SSLSample(
        kind=SSLTaskKind.JIGSAW_CONTINUOUS,
        input_image=shuffled,
        target=image,
        loss_indices=permutation.selection.indices,
        permutation=permutation,
    )


def jigsaw_position_labels(permutation: PatchPermutation) -> torch.Tensor:
    """Grid index each selected slot's current patch originally came from"""
    indices = permutation.selection.indices
    inverse = permutation.inverse().mapping
    return torch.tensor([indices[inverse[slot]] for slot in range(len(indices))], dtype=torch.long)


def make_jigsaw_discrete(image: torch.Tensor, grid: PatchGrid, ratio: float,
                         generator: Optional[torch.Generator] = None) -> SSLSample:
    """Input as Jigsaw-Continuous; targets are original grid positions"""
    shuffled, permutation = _shuffle(image, grid, ratio, generator)
    return SSLSample(
        kind=SSLTaskKind.JIGSAW_DISCRETE,
        input_image=shuffled,
        target=jigsaw_position_labels(permutation),
        loss_indices=permutation.selection.indices,
        permutation=permutation,
    )


def make_ssl_sample(config: SSLTaskConfig, image: torch.Tensor, grid: PatchGrid,
                    generator: Optional[torch.Generator] = None) -> SSLSample:
    kind = config.kind
    if kind is SSLTaskKind.RECONSTRUCTION:
        return make_reconstruction(image, grid)
    if kind is SSLTaskKind.MIM_CONTINUOUS:
        return make_mim_continuous(image, grid, config.ratio, generator)
    if kind is SSLTaskKind.MIM_DISCRETE:
        return make_mim_discrete(image, grid, config.ratio, config.tokenizer, generator)
    if kind is SSLTaskKind.JIGSAW_CONTINUOUS:
        return make_jigsaw_continuous(image, grid, config.ratio, generator)
    return make_jigsaw_discrete(image, grid, config.ratio, generator)


def ssl_loss(prediction: torch.Tensor, sample: SSLSample, grid: PatchGrid) -> torch.Tensor:
    """L1 (continuous) or cross-entropy (discrete) over loss_indices patches only"""
    if sample.kind.is_discrete:
        if prediction.dim() != 2 or prediction.shape[0] != grid.num_patches:
            raise ShapeError(
                f"expected ({grid.num_patches}, classes) logits, got {tuple(prediction.shape)}"
            )
        if sample.target.numel() and int(sample.target.max()) >= prediction.shape[1]:
            raise ShapeError(
                f"target label {int(sample.target.max())} outside {prediction.shape[1]} logit classes"
            )
    elif tuple(prediction.shape) != tuple(sample.target.shape):
        raise ShapeError(
            f"expected prediction of shape {tuple(sample.target.shape)}, got {tuple(prediction.shape)}"
        )

    if not sample.loss_indices:
        return prediction.sum() * 0.0

    index = torch.tensor(sample.loss_indices, dtype=torch.long, device=prediction.device)
    if sample.kind.is_discrete:
        return F.cross_entropy(prediction[index], sample.target.to(prediction.device))
    predicted = extract_patches(prediction, grid)[index]
    target = extract_patches(sample.target.to(prediction.device, prediction.dtype), grid)[index]
    return F.l1_loss(predicted, target)


def batch_ssl_loss(predictions: torch.Tensor, samples: Sequence[SSLSample],
                   grid: PatchGrid) -> torch.Tensor:
    """Mean of per-sample losses over a batch"""
    if predictions.shape[0] != len(samples):
        raise ShapeError(f"{predictions.shape[0]} predictions for {len(samples)} samples")
    losses = [ssl_loss(prediction, sample, grid) for prediction, sample in zip(predictions, samples)]
    return torch.stack(losses).mean()
