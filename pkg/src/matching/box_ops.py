"""
Box conversions and (generalized) IoU.

Zero-area boxes follow the area-0 convention: an empty union gives IoU 0 and
an empty enclosing box gives no enclosure penalty.
"""
from typing import Tuple

import torch


def box_cxcywh_to_xyxy(boxes: torch.Tensor) -> torch.Tensor:
    cx, cy, w, h = boxes.unbind(-1)
    return torch.stack([cx - 0.5 * w, cy - 0.5 * h, cx + 0.5 * w, cy + 0.5 * h], dim=-1)


def box_xyxy_to_cxcywh(boxes: torch.Tensor) -> torch.Tensor:
    x0, y0, x1, y1 = boxes.unbind(-1)
    return torch.stack([(x0 + x1) / 2, (y0 + y1) / 2, x1 - x0, y1 - y0], dim=-1)


def box_area(boxes: torch.Tensor) -> torch.Tensor:
    return (boxes[..., 2] - boxes[..., 0]).clamp(min=0) * (boxes[..., 3] - boxes[..., 1]).clamp(min=0)


def _safe_divide(numerator: torch.Tensor, denominator: torch.Tensor) -> torch.Tensor:
    positive = denominator > 0
    return torch.where(positive, numerator / torch.where(positive, denominator, torch.ones_like(denominator)),
                       torch.zeros_like(numerator))


def box_iou(boxes1: torch.Tensor, boxes2: torch.Tensor) -> Tuple[torch.Tensor, torch.Tensor]:
    """Pairwise IoU and union of xyxy boxes: (N, 4) x (M, 4) -> (N, M)"""
    area1 = box_area(boxes1)
    area2 = box_area(boxes2)

    lt = torch.max(boxes1[:, None, :2], boxes2[None, :, :2])
    rb = torch.min(boxes1[:, None, 2:], boxes2[None, :, 2:])
    wh = (rb - lt).clamp(min=0)
    inter = wh[..., 0] * wh[..., 1]

    union = area1[:, None] + area2[None, :] - inter
    return _safe_divide(inter, union), union


def generalized_box_iou(boxes1: torch.Tensor, boxes2: torch.Tensor) -> torch.Tensor:
    """Pairwise GIoU of xyxy boxes, differentiable, in [-1, 1]"""
    iou, union = box_iou(boxes1, boxes2)

    lt = torch.min(boxes1[:, None, :2], boxes2[None, :, :2])
    rb = torch.max(boxes1[:, None, 2:], boxes2[None, :, 2:])
    wh = (rb - lt).clamp(min=0)
    enclosure = wh[..., 0] * wh[..., 1]

    return iou - _safe_divide(enclosure - union, enclosure)


def giou(box_a: torch.Tensor, box_b: torch.Tensor) -> float:
    """GIoU of two (cx, cy, w, h) boxes"""
    a = box_cxcywh_to_xyxy(torch.as_tensor(box_a, dtype=torch.float64).reshape(1, 4))
    b = box_cxcywh_to_xyxy(torch.as_tensor(box_b, dtype=torch.float64).reshape(1, 4))
    return float(generalized_box_iou(a, b)[0, 0])


def iou(box_a: torch.Tensor, box_b: torch.Tensor) -> float:
    """IoU of two (cx, cy, w, h) boxes"""
    a = box_cxcywh_to_xyxy(torch.as_tensor(box_a, dtype=torch.float64).reshape(1, 4))
    b = box_cxcywh_to_xyxy(torch.as_tensor(box_b, dtype=torch.float64).reshape(1, 4))
    return float(box_iou(a, b)[0][0, 0])
