"""
Batches for training and evaluation.

Images are resized to the configured square size and kept as raw [0, 1]
pixels; normalisation happens in the optimisation steps right before the
network, after any SSL transform.
"""
import functools
import logging
import random
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np
import torch
from torch.utils.data import DataLoader, Dataset, get_worker_info

from config.settings import RUNTIME_CONFIG
from src.extractors.dataset import DetectionDataset
from src.matching.hungarian import GroundTruthSet
from src.transformers.preprocessing import resize_and_normalize, to_tensor_image

logger = logging.getLogger(__name__)


@dataclass
class Batch:
    images: torch.Tensor               # (B, 3, H, W) raw pixels in [0, 1]
    targets: List[GroundTruthSet]
    image_ids: List[int]
    original_sizes: List[Tuple[int, int]]  # (height, width) before resizing

    def __len__(self) -> int:
        return len(self.image_ids)

    def to(self, device) -> "Batch":
        return Batch(self.images.to(device), [gt.to(device) for gt in self.targets],
                     self.image_ids, self.original_sizes)


class DetectionImages(Dataset):
    def __init__(self, dataset: DetectionDataset, image_size: int, downsampling_factor: int):
        self.dataset = dataset
        self.image_size = image_size
        self.downsampling_factor = downsampling_factor

    def __len__(self) -> int:
        return len(self.dataset)

    def __getitem__(self, index: int):
        record = self.dataset.images[index]
        gt = self.dataset.ground_truth(record.id)
        model_input = resize_and_normalize(to_tensor_image(record.load_pixels()), self.image_size,
                                           self.downsampling_factor, gt.boxes)
        target = GroundTruthSet(gt.labels, model_input.boxes.float())
        return model_input.pixels, target, record.id, (record.height, record.width)


def collate_batch(items: Sequence) -> Batch:
    pixels, targets, image_ids, sizes = zip(*items)
    return Batch(torch.stack(pixels), list(targets), list(image_ids), list(sizes))


def seed_worker(worker_id: int, root_seed: int) -> None:
    """Each worker's RNG streams start from the root seed plus its index"""
    seed = root_seed + worker_id
    info = get_worker_info()
    if info is not None:
        seed = root_seed + info.id
    random.seed(seed)
    np.random.seed(seed % 2 ** 32)
    torch.manual_seed(seed)


def build_data_loader(dataset: DetectionDataset, image_size: int, downsampling_factor: int,
                      batch_size: int, shuffle: bool = False, seed: int = 0,
                      num_workers: Optional[int] = None) -> DataLoader:
    if num_workers is None:
        num_workers = RUNTIME_CONFIG['num_workers']
    generator = torch.Generator()
    generator.manual_seed(seed)
    return DataLoader(
        DetectionImages(dataset, image_size, downsampling_factor),
        batch_size=batch_size,
        shuffle=shuffle,
        collate_fn=collate_batch,
        num_workers=num_workers,
        worker_init_fn=functools.partial(seed_worker, root_seed=seed),
        generator=generator,
    )
