import logging
from typing import Optional, Tuple

from config.experiment import DataSection
from src.extractors.coco_extractor import load_coco
from src.extractors.dataset import DetectionDataset
from src.extractors.file_extractor import load_image_folder
from src.extractors.synthetic_extractor import SyntheticConfig, synthetic_splits

logger = logging.getLogger(__name__)


def synthetic_config(data: DataSection, seed: int) -> SyntheticConfig:
    synthetic = data.synthetic
    return SyntheticConfig(
        num_images=synthetic.num_images,
        image_size=data.image_size,
        classes=tuple(synthetic.classes),
        objects_per_image=tuple(synthetic.objects_per_image),
        size_range=tuple(synthetic.size_range),
        seed=seed,
    )


def load_datasets(data: DataSection, seed: int) -> Tuple[DetectionDataset, Optional[DetectionDataset]]:
    """(train, validation) for the configured data source"""
    if data.kind == "synthetic":
        return synthetic_splits(synthetic_config(data, seed), data.synthetic.num_val)
    if data.kind == "coco":
        train = load_coco(data.train_annotations, data.train_images)
        val = load_coco(data.val_annotations, data.val_images) if data.val_annotations else None
        return train, val
    return load_image_folder(data.image_folder), None
