"""
Optimal one-to-one assignment between predicted queries and ground-truth objects.
"""
import math
from dataclasses import dataclass
from typing import List, Sequence, Tuple

import numpy as np
import torch
from scipy.optimize import linear_sum_assignment

from src.errors import ContractError, InfeasibleMatchError, NumericError, ShapeError
from src.matching.box_ops import box_cxcywh_to_xyxy, generalized_box_iou
from src.models.base import DetectionSet


@dataclass(frozen=True)
class LossWeights:
    w_class: float = 1.0
    w_l1: float = 5.0
    w_giou: float = 2.0
    no_object: float = 0.1


@dataclass
class GroundTruthSet:
    labels: torch.Tensor  # (n,) contiguous class ids
    boxes: torch.Tensor   # (n, 4) normalized (cx, cy, w, h)

    def __post_init__(self):
        self.labels = torch.as_tensor(self.labels, dtype=torch.long).reshape(-1)
        boxes = torch.as_tensor(self.boxes)
        if not boxes.is_floating_point():
            boxes = boxes.float()
        self.boxes = boxes.reshape(-1, 4)
        if self.labels.shape[0] != self.boxes.shape[0]:
            raise ShapeError(f"{self.labels.shape[0]} labels for {self.boxes.shape[0]} boxes")
        if self.boxes.numel() and bool((self.boxes[:, 2:] <= 0).any()):
            raise ContractError("ground-truth boxes must have positive width and height")

    def __len__(self) -> int:
        return self.labels.shape[0]

    @classmethod
    def empty(cls) -> "GroundTruthSet":
        return cls(torch.zeros(0, dtype=torch.long), torch.zeros(0, 4))

    def to(self, device) -> "GroundTruthSet":
        return GroundTruthSet(self.labels.to(device), self.boxes.to(device))


@dataclass(frozen=True)
class MatchResult:
    pairs: Tuple[Tuple[int, int], ...]  # (prediction index, ground-truth index), sorted
    total_cost: float

    @property
    def prediction_indices(self) -> List[int]:
        return [p for p, _ in self.pairs]

    @property
    def target_indices(self) -> List[int]:
        return [g for _, g in self.pairs]


def _single_image(pred: DetectionSet) -> Tuple[torch.Tensor, torch.Tensor]:
    if pred.batch_size != 1:
        raise ShapeError(f"expected a single-image DetectionSet, got batch of {pred.batch_size}")
    return pred.class_logits[0], pred.boxes[0]


def pairwise_cost(pred: DetectionSet, gt: GroundTruthSet,
                  weights: LossWeights = LossWeights()) -> torch.Tensor:
    """(num_queries, num_gt) matching cost; no gradient"""
    logits, boxes = _single_image(pred)
    with torch.no_grad():
        if not bool(torch.isfinite(logits).all()) or not bool(torch.isfinite(boxes).all()):
            raise NumericError("predictions contain NaN or infinite values")
        if not bool(torch.isfinite(gt.boxes).all()):
            raise NumericError("ground-truth boxes contain NaN or infinite values")
        if len(gt) == 0:
            return logits.new_zeros((logits.shape[0], 0))

        target_boxes = gt.boxes.to(boxes.device, boxes.dtype)
        prob = logits.softmax(-1)
        cost_class = -prob[:, gt.labels.to(logits.device)]
        cost_l1 = torch.cdist(boxes, target_boxes, p=1)
        cost_giou = -generalized_box_iou(box_cxcywh_to_xyxy(boxes), box_cxcywh_to_xyxy(target_boxes))
        return weights.w_class * cost_class + weights.w_l1 * cost_l1 + weights.w_giou * cost_giou


def _optimal_cost(cost: np.ndarray, rows: Sequence[int], cols: Sequence[int]) -> float:
    if not cols:
        return 0.0
    sub = cost[np.ix_(rows, cols)]
    row_ind, col_ind = linear_sum_assignment(sub)
    return float(sub[row_ind, col_ind].sum())


def hungarian_match(cost_matrix) -> MatchResult:
    """Minimum-cost assignment covering every ground truth.

    Among equally optimal assignments the lexicographically smallest pair list
    (sorted by prediction index) wins. The tie-break fixes one pair at a time and
    re-solves the remaining subproblem for each candidate, so it costs up to Q*G
    extra solves of at most Q x G. That is fine at DETR query counts (Q = 100,
    G of a few dozen); much larger problems would want a single perturbed solve.
    """
    if isinstance(cost_matrix, torch.Tensor):
        cost_matrix = cost_matrix.detach().cpu().double().numpy()
    cost = np.asarray(cost_matrix, dtype=np.float64)
    if cost.ndim != 2:
        raise ShapeError(f"cost matrix must be 2-D, got shape {cost.shape}")
    num_rows, num_cols = cost.shape
    if num_rows < num_cols:
        raise InfeasibleMatchError(f"{num_cols} ground-truth objects but only {num_rows} predictions")
    if not np.isfinite(cost).all():
        raise NumericError("cost matrix contains NaN or infinite values")
    if num_cols == 0:
        return MatchResult((), 0.0)

    best = _optimal_cost(cost, list(range(num_rows)), list(range(num_cols)))
    tolerance = 1e-9 * max(1.0, abs(best))

    pairs: List[Tuple[int, int]] = []
    fixed_cost = 0.0
    free_cols = list(range(num_cols))
    for row in range(num_rows):
        if not free_cols:
            break
        later_rows = list(range(row + 1, num_rows))
        if len(later_rows) < len(free_cols) - 1:
            continue
        for col in list(free_cols):
            rest = [c for c in free_cols if c != col]
            if len(later_rows) < len(rest):
                continue
            candidate = fixed_cost + cost[row, col] + _optimal_cost(cost, later_rows, rest)
            if candidate <= best + tolerance:
                pairs.append((row, col))
                fixed_cost += cost[row, col]
                free_cols = rest
                break

    if free_cols:
        # only reachable through floating-point drift in the tolerance test
        row_ind, col_ind = linear_sum_assignment(cost)
        pairs = sorted(zip(row_ind.tolist(), col_ind.tolist()))
        return MatchResult(tuple(pairs), float(cost[row_ind, col_ind].sum()))
    total = math.fsum(cost[r, c] for r, c in pairs)
    return MatchResult(tuple(pairs), float(total))
