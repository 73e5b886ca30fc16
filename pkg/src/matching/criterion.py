"""
Set-prediction loss: classification over every query plus L1 and GIoU box
terms over matched pairs. The match is fixed; gradients flow through the loss only.
"""
from dataclasses import dataclass
from typing import Dict, List, Sequence

import torch
import torch.nn.functional as F

from src.errors import ContractError, ShapeError
from src.matching.box_ops import box_cxcywh_to_xyxy, generalized_box_iou
from src.matching.hungarian import GroundTruthSet, LossWeights, MatchResult, hungarian_match, pairwise_cost
from src.models.base import DetectionSet


@dataclass
class DetectionLoss:
    total: torch.Tensor
    terms: Dict[str, torch.Tensor]  # weighted; total == sum(terms)

    def as_floats(self) -> Dict[str, float]:
        values = {name: float(term.detach()) for name, term in self.terms.items()}
        values["detection_loss"] = float(self.total.detach())
        return values


def _check_match(pred: DetectionSet, gt: GroundTruthSet, match: MatchResult) -> None:
    if len(match.pairs) != len(gt):
        raise ContractError(f"match has {len(match.pairs)} pairs for {len(gt)} ground-truth objects")
    predictions = match.prediction_indices
    targets = match.target_indices
    if len(set(predictions)) != len(predictions) or len(set(targets)) != len(targets):
        raise ContractError("match pairs must use each prediction and ground truth at most once")
    if any(not 0 <= p < pred.num_queries for p in predictions):
        raise ContractError(f"match references prediction outside [0, {pred.num_queries})")
    if any(not 0 <= g < len(gt) for g in targets):
        raise ContractError(f"match references ground truth outside [0, {len(gt)})")
    if len(gt) and int(gt.labels.max()) >= pred.num_classes:
        raise ContractError(f"ground-truth label {int(gt.labels.max())} outside {pred.num_classes} classes")


def detection_loss(pred: DetectionSet, gt: GroundTruthSet, match: MatchResult,
                   weights: LossWeights = LossWeights()) -> DetectionLoss:
    """Loss for a single-image DetectionSet under a fixed match"""
    if pred.batch_size != 1:
        raise ShapeError(f"expected a single-image DetectionSet, got batch of {pred.batch_size}")
    _check_match(pred, gt, match)
    logits = pred.class_logits[0]
    boxes = pred.boxes[0]
    num_classes = pred.num_classes

    class_weight = torch.ones(num_classes + 1, dtype=logits.dtype, device=logits.device)
    class_weight[-1] = weights.no_object
    target_classes = torch.full((pred.num_queries,), num_classes, dtype=torch.long, device=logits.device)
    if match.pairs:
        src = torch.tensor(match.prediction_indices, dtype=torch.long, device=logits.device)
        tgt = torch.tensor(match.target_indices, dtype=torch.long)
        target_classes[src] = gt.labels[tgt].to(logits.device)
    loss_ce = F.cross_entropy(logits, target_classes, weight=class_weight)

    num_boxes = max(len(gt), 1)
    if match.pairs:
        src_boxes = boxes[src]
        target_boxes = gt.boxes[tgt].to(boxes.device, boxes.dtype)
        loss_l1 = F.l1_loss(src_boxes, target_boxes, reduction="sum") / num_boxes
        giou = torch.diag(generalized_box_iou(box_cxcywh_to_xyxy(src_boxes), box_cxcywh_to_xyxy(target_boxes)))
        loss_giou = (1 - giou).sum() / num_boxes
    else:
        loss_l1 = boxes.sum() * 0.0
        loss_giou = boxes.sum() * 0.0

    terms = {
        "loss_ce": weights.w_class * loss_ce,
        "loss_bbox": weights.w_l1 * loss_l1,
        "loss_giou": weights.w_giou * loss_giou,
    }
    total = terms["loss_ce"] + terms["loss_bbox"] + terms["loss_giou"]
    return DetectionLoss(total, terms)


def match_image(pred: DetectionSet, gt: GroundTruthSet, weights: LossWeights = LossWeights()) -> MatchResult:
    return hungarian_match(pairwise_cost(pred, gt, weights))


def match_and_loss(pred: DetectionSet, targets: Sequence[GroundTruthSet],
                   weights: LossWeights = LossWeights()) -> DetectionLoss:
    """Per-image matching, then the mean of per-image losses over the batch"""
    if pred.batch_size != len(targets):
        raise ShapeError(f"{pred.batch_size} predictions for {len(targets)} targets")
    losses: List[DetectionLoss] = []
    for index, gt in enumerate(targets):
        single = pred.image(index)
        losses.append(detection_loss(single, gt, match_image(single, gt, weights), weights))
    terms = {name: torch.stack([loss.terms[name] for loss in losses]).mean() for name in losses[0].terms}
    total = terms["loss_ce"] + terms["loss_bbox"] + terms["loss_giou"]
    return DetectionLoss(total, terms)
