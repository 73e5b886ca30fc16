"""
COCO-format annotation ingestion and export.

Pixel xywh boxes become normalized (cx, cy, w, h); category ids are remapped to
contiguous [0, num_classes) in ascending source-id order. Problems that do not
make the file unusable are collected in a ValidationReport instead of raising.
"""
import json
import logging
from pathlib import Path
from typing import Dict, List, Optional, Union

import torch

from src.errors import AnnotationParseError, DatasetError
from src.extractors.dataset import DetectionDataset, ImageRecord, log_dataset, resolve_image_path
from src.matching.hungarian import GroundTruthSet
from src.transformers.data_validator import ValidationReport, clamp_xywh

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]


def _read_json(path: Path) -> Dict:
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as e:
        raise DatasetError(f"cannot read annotation file {path}: {e}") from e
    try:
        document = json.loads(text)
    except json.JSONDecodeError as e:
        raise AnnotationParseError(str(path), e.msg, e.lineno, e.colno) from e
    if not isinstance(document, dict):
        raise AnnotationParseError(str(path), "top level must be a JSON object")
    for key in ("images", "categories"):
        if not isinstance(document.get(key), list):
            raise AnnotationParseError(str(path), f"missing or invalid '{key}' list")
    if not isinstance(document.get("annotations", []), list):
        raise AnnotationParseError(str(path), "'annotations' must be a list")
    return document


def xywh_to_normalized(box, width: int, height: int) -> List[float]:
    x, y, w, h = box
    return [(x + w / 2) / width, (y + h / 2) / height, w / width, h / height]


def normalized_to_xywh(box, width: int, height: int) -> List[float]:
    cx, cy, w, h = (float(v) for v in box)
    return [(cx - w / 2) * width, (cy - h / 2) * height, w * width, h * height]


def _ground_truth_set(labels: List[int], boxes: List[List[float]]) -> GroundTruthSet:
    return GroundTruthSet(torch.tensor(labels, dtype=torch.long),
                          torch.tensor(boxes, dtype=torch.float64).reshape(-1, 4))


def load_coco(annotation_file: PathLike, image_root: Optional[PathLike] = None) -> DetectionDataset:
    """Parse a COCO annotation file; images without boxes are kept"""
    path = Path(annotation_file)
    document = _read_json(path)
    report = ValidationReport()

    try:
        categories = sorted(document["categories"], key=lambda c: int(c["id"]))
        category_ids = {index: int(c["id"]) for index, c in enumerate(categories)}
        classes = {index: str(c.get("name", c["id"])) for index, c in enumerate(categories)}
        contiguous = {source: index for index, source in category_ids.items()}

        images: Dict[int, ImageRecord] = {}
        missing = set()
        for entry in document["images"]:
            image_id = int(entry["id"])
            file_name = str(entry.get("file_name", f"{image_id}.png"))
            image_path = resolve_image_path(image_root, file_name)
            if image_path is not None and not image_path.is_file():
                report.missing_images.append(file_name)
                missing.add(image_id)
                continue
            images[image_id] = ImageRecord(
                id=image_id, height=int(entry["height"]), width=int(entry["width"]),
                file_name=file_name, path=None if image_path is None else str(image_path),
            )

        labels: Dict[int, List[int]] = {image_id: [] for image_id in images}
        boxes: Dict[int, List[List[float]]] = {image_id: [] for image_id in images}
        crowd_labels: Dict[int, List[int]] = {image_id: [] for image_id in images}
        crowd_boxes: Dict[int, List[List[float]]] = {image_id: [] for image_id in images}
        for annotation in document.get("annotations", []):
            image_id = int(annotation["image_id"])
            if image_id in missing:
                continue
            if image_id not in images:
                report.orphan_annotations += 1
                continue
            category = int(annotation["category_id"])
            if category not in contiguous:
                report.unknown_categories.append(category)
                continue
            record = images[image_id]
            box, clamped = clamp_xywh(annotation["bbox"], record.width, record.height)
            if annotation.get("iscrowd", 0):
                report.crowd_annotations += 1
                if box is not None:
                    crowd_labels[image_id].append(contiguous[category])
                    crowd_boxes[image_id].append(xywh_to_normalized(box, record.width, record.height))
                continue
            if clamped:
                report.clamped_boxes += 1
            if box is None:
                report.dropped_boxes += 1
                continue
            labels[image_id].append(contiguous[category])
            boxes[image_id].append(xywh_to_normalized(box, record.width, record.height))
    except (KeyError, TypeError, ValueError) as e:
        raise AnnotationParseError(str(path), f"malformed COCO entry: {e!r}") from e

    annotations = {image_id: _ground_truth_set(labels[image_id], boxes[image_id]) for image_id in images}
    crowd = {image_id: _ground_truth_set(crowd_labels[image_id], crowd_boxes[image_id])
             for image_id in images if crowd_labels[image_id]}
    dataset = DetectionDataset(
        images=[images[image_id] for image_id in sorted(images)],
        annotations=annotations,
        crowd=crowd,
        classes=classes,
        category_ids=category_ids,
        report=report,
    )
    report.log_summary(str(path))
    log_dataset(dataset, str(path))
    return dataset


def to_coco_dict(dataset: DetectionDataset) -> Dict:
    images, annotations = [], []
    next_id = 1
    for record in dataset.images:
        images.append({
            "id": record.id,
            "file_name": record.file_name or f"{record.id:06d}.png",
            "height": record.height,
            "width": record.width,
        })
        for iscrowd, gt in ((0, dataset.ground_truth(record.id)), (1, dataset.crowd_regions(record.id))):
            for label, box in zip(gt.labels.tolist(), gt.boxes.double().tolist()):
                bbox = normalized_to_xywh(box, record.width, record.height)
                annotations.append({
                    "id": next_id,
                    "image_id": record.id,
                    "category_id": dataset.category_ids[label],
                    "bbox": bbox,
                    "area": bbox[2] * bbox[3],
                    "iscrowd": iscrowd,
                })
                next_id += 1
    categories = [{"id": dataset.category_ids[index], "name": name}
                  for index, name in sorted(dataset.classes.items())]
    return {"images": images, "annotations": annotations, "categories": categories}


def export_coco(dataset: DetectionDataset, path: PathLike) -> Path:
    """Write the dataset's annotations as COCO JSON"""
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(to_coco_dict(dataset)), encoding="utf-8")
    except OSError as e:
        raise DatasetError(f"cannot write annotation file {path}: {e}") from e
    logger.info("Exported %d images to %s", len(dataset), path)
    return path
