"""
In-memory detection dataset shared by every extractor.

Boxes are stored per image as a GroundTruthSet in normalized (cx, cy, w, h)
with contiguous class ids; `category_ids` maps them back to the source ids.
"""
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import numpy as np
from PIL import Image

from src.errors import ContractError, DatasetError
from src.matching.hungarian import GroundTruthSet
from src.transformers.data_validator import ValidationReport

logger = logging.getLogger(__name__)


@dataclass
class ImageRecord:
    id: int
    height: int
    width: int
    file_name: Optional[str] = None
    path: Optional[str] = None
    pixels: Optional[np.ndarray] = field(default=None, repr=False)  # HxWx3 uint8 when generated

    def load_pixels(self) -> np.ndarray:
        if self.pixels is not None:
            return self.pixels
        if self.path is None:
            raise DatasetError(f"image {self.id} has neither pixels nor a file path")
        try:
            with Image.open(self.path) as image:
                return np.asarray(image.convert("RGB"), dtype=np.uint8)
        except OSError as e:
            raise DatasetError(f"cannot read image {self.path}: {e}") from e


@dataclass
class DetectionDataset:
    images: List[ImageRecord]
    annotations: Dict[int, GroundTruthSet]
    classes: Dict[int, str]
    category_ids: Dict[int, int] = field(default_factory=dict)
    report: ValidationReport = field(default_factory=ValidationReport)
    labeled: bool = True
    # COCO iscrowd regions: ignored by evaluation, never training targets
    crowd: Dict[int, GroundTruthSet] = field(default_factory=dict)

    def __post_init__(self):
        known = {record.id for record in self.images}
        if len(known) != len(self.images):
            raise ContractError("image ids must be unique")
        orphans = sorted((set(self.annotations) | set(self.crowd)) - known)
        if orphans:
            raise ContractError(f"annotations reference unknown images {orphans[:5]}")
        for image_id in known:
            self.annotations.setdefault(image_id, GroundTruthSet.empty())
        if not self.category_ids:
            self.category_ids = {index: index for index in self.classes}
        for image_id, gt in list(self.annotations.items()) + list(self.crowd.items()):
            self._check_boxes(image_id, gt)

    def _check_boxes(self, image_id: int, gt: GroundTruthSet) -> None:
        if len(gt) == 0:
            return
        boxes = gt.boxes
        x0 = boxes[:, 0] - boxes[:, 2] / 2
        y0 = boxes[:, 1] - boxes[:, 3] / 2
        x1 = boxes[:, 0] + boxes[:, 2] / 2
        y1 = boxes[:, 1] + boxes[:, 3] / 2
        if bool((x0 < -1e-6).any() or (y0 < -1e-6).any() or (x1 > 1 + 1e-6).any() or (y1 > 1 + 1e-6).any()):
            raise ContractError(f"image {image_id} has boxes outside the image bounds")
        if int(gt.labels.max()) >= self.num_classes or int(gt.labels.min()) < 0:
            raise ContractError(f"image {image_id} has labels outside [0, {self.num_classes})")

    def __len__(self) -> int:
        return len(self.images)

    @property
    def num_classes(self) -> int:
        return len(self.classes)

    @property
    def image_ids(self) -> List[int]:
        return [record.id for record in self.images]

    @property
    def num_annotations(self) -> int:
        return sum(len(gt) for gt in self.annotations.values())

    def ground_truth(self, image_id: int) -> GroundTruthSet:
        return self.annotations[image_id]

    def crowd_regions(self, image_id: int) -> GroundTruthSet:
        return self.crowd.get(image_id, GroundTruthSet.empty())

    def subset(self, indices: Sequence[int]) -> "DetectionDataset":
        images = [self.images[i] for i in indices]
        return DetectionDataset(
            images=images,
            annotations={record.id: self.annotations[record.id] for record in images},
            crowd={record.id: self.crowd[record.id] for record in images if record.id in self.crowd},
            classes=dict(self.classes),
            category_ids=dict(self.category_ids),
            labeled=self.labeled,
        )

    def require_annotations(self, purpose: str) -> None:
        if not self.labeled:
            raise DatasetError(f"{purpose} needs an annotated dataset")

    def require_images(self, purpose: str) -> None:
        if not self.images:
            raise DatasetError(f"{purpose} needs at least one image, dataset is empty")


def resolve_image_path(image_root: Optional[Path], file_name: str) -> Optional[Path]:
    if image_root is None:
        return None
    return Path(image_root) / file_name


def log_dataset(dataset: DetectionDataset, source: str) -> None:
    logger.info("Loaded %s: %d images, %d boxes, %d classes",
                source, len(dataset), dataset.num_annotations, dataset.num_classes)
