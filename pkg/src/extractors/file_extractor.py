import logging
from pathlib import Path
from typing import Sequence, Union

from PIL import Image

from src.errors import DatasetError
from src.extractors.dataset import DetectionDataset, ImageRecord, log_dataset

logger = logging.getLogger(__name__)

IMAGE_EXTENSIONS = (".png", ".jpg", ".jpeg")


def load_image_folder(root: Union[str, Path], extensions: Sequence[str] = IMAGE_EXTENSIONS) -> DetectionDataset:
    """Unlabeled dataset of every image file under root, ordered by relative path"""
    root = Path(root)
    if not root.is_dir():
        raise DatasetError(f"image folder does not exist: {root}")
    files = sorted(p for p in root.rglob("*") if p.is_file() and p.suffix.lower() in extensions)
    images = []
    for image_id, path in enumerate(files, start=1):
        try:
            with Image.open(path) as image:
                width, height = image.size
        except OSError as e:
            raise DatasetError(f"cannot read image {path}: {e}") from e
        images.append(ImageRecord(id=image_id, height=height, width=width,
                                  file_name=str(path.relative_to(root)), path=str(path)))
    dataset = DetectionDataset(images=images, annotations={}, classes={}, labeled=False)
    log_dataset(dataset, str(root))
    return dataset
