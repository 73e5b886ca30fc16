"""
Model outputs to COCO-style detections and a full evaluation pass.
"""
import logging
from typing import Dict, List, Optional, Sequence, Tuple

import torch

from src.errors import ContractError
from src.evaluation.coco_metrics import MAX_DETECTIONS, Detection, EvalReport, GroundTruthBox, compute_coco_map
from src.extractors.coco_extractor import normalized_to_xywh
from src.extractors.dataset import DetectionDataset
from src.loaders.batch_loader import build_data_loader
from src.matching.box_ops import box_cxcywh_to_xyxy
from src.models.base import DetectionSet
from src.models.detector import SSLDetector
from src.transformers.preprocessing import normalize

logger = logging.getLogger(__name__)


def detections_from_model(outputs: DetectionSet, image_ids: Sequence[int], image_sizes: Sequence[Tuple[int, int]],
                          category_ids: Dict[int, int], max_dets: int = MAX_DETECTIONS) -> List[Detection]:
    """Best non-background class per query, top-scoring queries per image, absolute xywh boxes"""
    if outputs.batch_size != len(image_ids) or len(image_ids) != len(image_sizes):
        raise ContractError(
            f"{outputs.batch_size} outputs for {len(image_ids)} image ids and {len(image_sizes)} sizes"
        )
    probabilities = outputs.class_logits.detach().float().softmax(-1)[..., :-1]
    scores, labels = probabilities.max(-1)
    boxes = box_cxcywh_to_xyxy(outputs.boxes.detach().double())
    detections = []
    for index, (image_id, (height, width)) in enumerate(zip(image_ids, image_sizes)):
        order = torch.argsort(scores[index], descending=True, stable=True)[:max_dets]
        scale = torch.tensor([width, height, width, height], dtype=torch.float64)
        absolute = boxes[index][order] * scale
        for query, (x0, y0, x1, y1) in zip(order.tolist(), absolute.tolist()):
            detections.append(Detection(
                image_id=int(image_id),
                category_id=category_ids[int(labels[index, query])],
                bbox=(x0, y0, x1 - x0, y1 - y0),
                score=float(scores[index, query]),
            ))
    return detections


def dataset_ground_truths(dataset: DetectionDataset) -> List[GroundTruthBox]:
    boxes = []
    for record in dataset.images:
        for iscrowd, gt in ((False, dataset.ground_truth(record.id)), (True, dataset.crowd_regions(record.id))):
            for label, box in zip(gt.labels.tolist(), gt.boxes.double().tolist()):
                xywh = tuple(normalized_to_xywh(box, record.width, record.height))
                boxes.append(GroundTruthBox(record.id, dataset.category_ids[label], xywh, xywh[2] * xywh[3],
                                            iscrowd=iscrowd))
    return boxes


def evaluate_model(model: SSLDetector, dataset: DetectionDataset, batch_size: int = 8,
                   device: Optional[str] = None, workers: int = 1) -> EvalReport:
    dataset.require_images("evaluation")
    dataset.require_annotations("evaluation")
    if model.config.num_classes != dataset.num_classes:
        raise ContractError(
            f"model predicts {model.config.num_classes} classes, dataset has {dataset.num_classes}"
        )
    device = device or next(model.parameters()).device
    was_training = model.training
    model.eval()
    loader = build_data_loader(dataset, model.config.image_size, model.downsampling_factor, batch_size)
    detections: List[Detection] = []
    with torch.no_grad():
        for batch in loader:
            outputs = model(normalize(batch.images.to(device)))
            detections.extend(detections_from_model(outputs, batch.image_ids, batch.original_sizes,
                                                    dataset.category_ids))
    model.train(was_training)
    report = compute_coco_map(detections, dataset_ground_truths(dataset), image_ids=dataset.image_ids,
                              category_ids=[dataset.category_ids[k] for k in sorted(dataset.category_ids)],
                              workers=workers)
    logger.info("Evaluated %d images: AP %.4f AP50 %.4f", len(dataset), report.map, report.ap50)
    return report
