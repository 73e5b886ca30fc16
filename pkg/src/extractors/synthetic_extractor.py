"""
Synthetic shapes dataset: bright circles, squares and triangles on dark noise.

Everything is drawn from one numpy Generator seeded by the config, so the same
config always yields byte-identical pixels. Recorded boxes are the exact pixel
extent of each planted mask.
"""
import hashlib
import logging
from dataclasses import dataclass, replace
from pathlib import Path
from typing import List, Optional, Tuple, Union

import numpy as np
import torch
from PIL import Image
from tqdm import tqdm

from config.settings import progress_enabled
from src.errors import DatasetError, RangeError
from src.extractors.coco_extractor import xywh_to_normalized
from src.extractors.dataset import DetectionDataset, ImageRecord, log_dataset
from src.matching.hungarian import GroundTruthSet

logger = logging.getLogger(__name__)

SHAPES = ("circle", "square", "triangle")
MAX_PLACEMENT_ATTEMPTS = 50


@dataclass(frozen=True)
class SyntheticConfig:
    num_images: int = 500
    image_size: int = 128
    classes: Tuple[str, ...] = SHAPES
    objects_per_image: Tuple[int, int] = (1, 3)
    size_range: Tuple[int, int] = (16, 40)
    seed: int = 0
    background_max: int = 64

    def __post_init__(self):
        if self.num_images < 0:
            raise RangeError(f"num_images must be >= 0, got {self.num_images}")
        unknown = [name for name in self.classes if name not in SHAPES]
        if not self.classes or unknown:
            raise RangeError(f"classes must be drawn from {SHAPES}, got {self.classes}")
        low, high = self.objects_per_image
        if low < 0 or high < low:
            raise RangeError(f"objects_per_image must satisfy 0 <= min <= max, got {self.objects_per_image}")
        smallest, largest = self.size_range
        if smallest < 2 or largest < smallest or largest > self.image_size:
            raise RangeError(
                f"size_range must satisfy 2 <= min <= max <= image_size ({self.image_size}), got {self.size_range}"
            )
        if not 0 <= self.background_max < 128:
            raise RangeError(f"background_max must be in [0, 128), got {self.background_max}")


def shape_mask(kind: str, size: int) -> np.ndarray:
    """Boolean size x size mask whose extent is the full square"""
    yy, xx = np.mgrid[0:size, 0:size]
    center = (size - 1) / 2
    if kind == "square":
        return np.ones((size, size), dtype=bool)
    if kind == "circle":
        return (yy - center) ** 2 + (xx - center) ** 2 <= (size / 2) ** 2
    if kind == "triangle":
        # apex at the top, base along the bottom row
        return np.abs(xx - center) <= (yy + 1) / 2
    raise RangeError(f"unknown shape '{kind}'")


def plant_shape(pixels: np.ndarray, kind: str, x0: int, y0: int, size: int,
                color: Tuple[int, int, int]) -> Tuple[float, float, float, float]:
    """Draw a shape in place and return its exact pixel xywh extent"""
    mask = shape_mask(kind, size)
    height, width = pixels.shape[:2]
    if x0 < 0 or y0 < 0 or x0 + size > width or y0 + size > height:
        raise RangeError(f"{kind} of size {size} at ({x0}, {y0}) does not fit a {width}x{height} image")
    region = pixels[y0:y0 + size, x0:x0 + size]
    region[mask] = np.asarray(color, dtype=np.uint8)
    rows = np.flatnonzero(mask.any(axis=1))
    cols = np.flatnonzero(mask.any(axis=0))
    return (float(x0 + cols[0]), float(y0 + rows[0]),
            float(cols[-1] - cols[0] + 1), float(rows[-1] - rows[0] + 1))


def _overlaps(box: Tuple[int, int, int], placed: List[Tuple[int, int, int]]) -> bool:
    x, y, s = box
    return any(x < px + ps and px < x + s and y < py + ps and py < y + s for px, py, ps in placed)


def _generate_image(rng: np.random.Generator, config: SyntheticConfig):
    size = config.image_size
    pixels = rng.integers(0, config.background_max + 1, size=(size, size, 3), dtype=np.uint8)
    count = int(rng.integers(config.objects_per_image[0], config.objects_per_image[1] + 1))
    placed: List[Tuple[int, int, int]] = []
    labels, boxes = [], []
    for _ in range(count):
        label = int(rng.integers(len(config.classes)))
        side = int(rng.integers(config.size_range[0], config.size_range[1] + 1))
        color = tuple(int(c) for c in rng.integers(128, 256, size=3))
        for _ in range(MAX_PLACEMENT_ATTEMPTS):
            x0 = int(rng.integers(0, size - side + 1))
            y0 = int(rng.integers(0, size - side + 1))
            if not _overlaps((x0, y0, side), placed):
                break
        else:
            logger.debug("No free spot for a %d px %s, skipped", side, config.classes[label])
            continue
        placed.append((x0, y0, side))
        box = plant_shape(pixels, config.classes[label], x0, y0, side, color)
        labels.append(label)
        boxes.append(xywh_to_normalized(box, size, size))
    return pixels, labels, boxes


def generate_synthetic(config: SyntheticConfig = SyntheticConfig(), first_id: int = 1) -> DetectionDataset:
    """Deterministic shapes dataset for desk-scale experiments"""
    rng = np.random.default_rng(config.seed)
    images, annotations = [], {}
    iterator = tqdm(range(config.num_images), desc="Generating", unit="img",
                    disable=not progress_enabled() or config.num_images < 100)
    for index in iterator:
        image_id = first_id + index
        pixels, labels, boxes = _generate_image(rng, config)
        images.append(ImageRecord(id=image_id, height=config.image_size, width=config.image_size,
                                  file_name=f"{image_id:06d}.png", pixels=pixels))
        annotations[image_id] = GroundTruthSet(torch.tensor(labels, dtype=torch.long),
                                               torch.tensor(boxes, dtype=torch.float64).reshape(-1, 4))
    dataset = DetectionDataset(
        images=images,
        annotations=annotations,
        classes={index: name for index, name in enumerate(config.classes)},
        category_ids={index: index + 1 for index in range(len(config.classes))},
    )
    log_dataset(dataset, f"synthetic(seed={config.seed})")
    return dataset


def pixel_checksum(dataset: DetectionDataset) -> str:
    digest = hashlib.sha256()
    for record in dataset.images:
        pixels = record.load_pixels()
        digest.update(np.int64(record.id).tobytes())
        digest.update(np.ascontiguousarray(pixels).tobytes())
    return digest.hexdigest()


def write_images(dataset: DetectionDataset, root: Union[str, Path]) -> List[Path]:
    """Save generated pixels as PNG and point each record at its file"""
    root = Path(root)
    try:
        root.mkdir(parents=True, exist_ok=True)
    except OSError as e:
        raise DatasetError(f"cannot create image directory {root}: {e}") from e
    written = []
    for record in dataset.images:
        path = root / (record.file_name or f"{record.id:06d}.png")
        try:
            Image.fromarray(record.load_pixels()).save(path)
        except OSError as e:
            raise DatasetError(f"cannot write image {path}: {e}") from e
        record.path = str(path)
        written.append(path)
    logger.info("Wrote %d images to %s", len(written), root)
    return written


def synthetic_splits(config: SyntheticConfig, num_val: Optional[int] = 100):
    """Train split from the config seed, validation from an offset seed with disjoint ids"""
    train = generate_synthetic(config)
    if not num_val:
        return train, None
    val_config = replace(config, num_images=num_val, seed=config.seed + 1_000_003)
    return train, generate_synthetic(val_config, first_id=config.num_images + 1)
