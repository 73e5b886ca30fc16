"""
COCO-protocol box AP.

Greedy confidence-ordered matching per image and category, 101-point
interpolated precision, IoU thresholds 0.50:0.05:0.95, at most 100 detections
per image and category, and small/medium/large buckets on absolute pixel area.
Buckets and classes without ground truth report -1.
"""
import json
import logging
from collections import OrderedDict, defaultdict
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from enum import Enum
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
import torch

from src.errors import ContractError

logger = logging.getLogger(__name__)

IOU_THRESHOLDS = np.linspace(0.5, 0.95, int(np.round((0.95 - 0.5) / 0.05)) + 1, endpoint=True)
RECALL_THRESHOLDS = np.linspace(0.0, 1.00, int(np.round((1.00 - 0.0) / 0.01)) + 1, endpoint=True)
MAX_DETECTIONS = 100
SMALL_AREA = 32 ** 2
LARGE_AREA = 96 ** 2


class SizeBucket(str, Enum):
    SMALL = "small"
    MEDIUM = "medium"
    LARGE = "large"


AREA_RANGES = OrderedDict([
    ("all", (0.0, float("inf"))),
    ("small", (0.0, float(SMALL_AREA))),
    ("medium", (float(SMALL_AREA), float(LARGE_AREA))),
    ("large", (float(LARGE_AREA), float("inf"))),
])


@dataclass(frozen=True)
class Detection:
    image_id: int
    category_id: int
    bbox: Tuple[float, float, float, float]  # absolute xywh
    score: float


@dataclass(frozen=True)
class GroundTruthBox:
    image_id: int
    category_id: int
    bbox: Tuple[float, float, float, float]  # absolute xywh
    area: Optional[float] = None
    iscrowd: bool = False

    @property
    def box_area(self) -> float:
        return float(self.area) if self.area is not None else float(self.bbox[2] * self.bbox[3])


@dataclass
class EvalReport:
    ap_per_threshold: List[float]
    map: float
    ap50: float
    ap75: float
    ap_small: float
    ap_medium: float
    ap_large: float
    per_class: Dict[int, float] = field(default_factory=dict)
    iou_thresholds: List[float] = field(default_factory=lambda: [round(float(t), 2) for t in IOU_THRESHOLDS])

    def summary_row(self) -> "OrderedDict[str, float]":
        """Columns in the usual results-table order"""
        return OrderedDict([
            ("AP", self.map), ("AP50", self.ap50), ("AP75", self.ap75),
            ("APs", self.ap_small), ("APm", self.ap_medium), ("APl", self.ap_large),
        ])

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame([self.summary_row()])

    def per_class_frame(self, class_names: Optional[Dict[int, str]] = None) -> pd.DataFrame:
        names = class_names or {}
        rows = [{"category_id": cid, "name": names.get(cid, str(cid)), "AP": ap}
                for cid, ap in sorted(self.per_class.items())]
        return pd.DataFrame(rows, columns=["category_id", "name", "AP"])

    def to_dict(self) -> Dict:
        data = asdict(self)
        data["per_class"] = {str(k): v for k, v in self.per_class.items()}
        data["summary"] = dict(self.summary_row())
        return data

    @classmethod
    def from_dict(cls, data: Dict) -> "EvalReport":
        data = {k: v for k, v in data.items() if k != "summary"}
        data["per_class"] = {int(k): float(v) for k, v in data.get("per_class", {}).items()}
        return cls(**data)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)


def bucket_of_area(area: float) -> SizeBucket:
    if area < SMALL_AREA:
        return SizeBucket.SMALL
    if area < LARGE_AREA:
        return SizeBucket.MEDIUM
    return SizeBucket.LARGE


def bucket_by_size(boxes, image_height: int, image_width: int) -> List[SizeBucket]:
    """Size class of normalized (cx, cy, w, h) boxes by absolute pixel area"""
    boxes = torch.as_tensor(boxes, dtype=torch.float64).reshape(-1, 4)
    if bool((boxes[:, 2:] < 0).any()) or not bool(torch.isfinite(boxes).all()):
        raise ContractError("boxes must be finite with non-negative width and height")
    areas = boxes[:, 2] * image_width * boxes[:, 3] * image_height
    return [bucket_of_area(float(a)) for a in areas]


def _in_range(area: float, area_range: Tuple[float, float]) -> bool:
    return area_range[0] <= area < area_range[1]


def _check_box(bbox: Sequence[float]) -> None:
    if len(bbox) != 4 or not all(np.isfinite(bbox)) or bbox[2] < 0 or bbox[3] < 0:
        raise ContractError(f"invalid xywh box {tuple(bbox)}")


def _iou_xywh(dets: np.ndarray, gts: np.ndarray, iscrowd: np.ndarray) -> np.ndarray:
    """(D, G) IoU; crowd regions divide by the detection area only"""
    if len(dets) == 0 or len(gts) == 0:
        return np.zeros((len(dets), len(gts)))
    d_x1, d_y1 = dets[:, 0] + dets[:, 2], dets[:, 1] + dets[:, 3]
    g_x1, g_y1 = gts[:, 0] + gts[:, 2], gts[:, 1] + gts[:, 3]
    iw = np.minimum(d_x1[:, None], g_x1[None, :]) - np.maximum(dets[:, 0][:, None], gts[:, 0][None, :])
    ih = np.minimum(d_y1[:, None], g_y1[None, :]) - np.maximum(dets[:, 1][:, None], gts[:, 1][None, :])
    inter = np.clip(iw, 0, None) * np.clip(ih, 0, None)
    d_area = dets[:, 2] * dets[:, 3]
    g_area = gts[:, 2] * gts[:, 3]
    union = np.where(iscrowd[None, :], d_area[:, None], d_area[:, None] + g_area[None, :] - inter)
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.where(union > 0, inter / np.where(union > 0, union, 1.0), 0.0)


@dataclass
class _ImageResult:
    scores: np.ndarray   # (D,)
    matched: np.ndarray  # (T, D) bool
    ignored: np.ndarray  # (T, D) bool
    num_positive: int


def _evaluate_image(dets: List[Detection], gts: List[GroundTruthBox], area_range: Tuple[float, float],
                    iou_thresholds: np.ndarray, max_dets: int) -> Optional[_ImageResult]:
    if not dets and not gts:
        return None
    gt_ignore = np.array([g.iscrowd or not _in_range(g.box_area, area_range) for g in gts], dtype=bool)
    gt_order = np.argsort(gt_ignore, kind="mergesort")
    gts = [gts[i] for i in gt_order]
    gt_ignore = gt_ignore[gt_order]
    iscrowd = np.array([g.iscrowd for g in gts], dtype=bool)

    det_order = np.argsort([-d.score for d in dets], kind="mergesort")
    dets = [dets[i] for i in det_order[:max_dets]]

    ious = _iou_xywh(np.array([d.bbox for d in dets], dtype=np.float64).reshape(-1, 4),
                     np.array([g.bbox for g in gts], dtype=np.float64).reshape(-1, 4), iscrowd)

    num_t, num_d, num_g = len(iou_thresholds), len(dets), len(gts)
    gt_matched = np.zeros((num_t, num_g), dtype=bool)
    dt_matched = np.zeros((num_t, num_d), dtype=bool)
    dt_ignore = np.zeros((num_t, num_d), dtype=bool)
    for t_index, threshold in enumerate(iou_thresholds):
        for d_index in range(num_d):
            best = min(threshold, 1 - 1e-10)
            match = -1
            for g_index in range(num_g):
                if gt_matched[t_index, g_index] and not iscrowd[g_index]:
                    continue
                # ordinary gts come first; stop once only ignored ones are left
                if match > -1 and not gt_ignore[match] and gt_ignore[g_index]:
                    break
                if ious[d_index, g_index] < best:
                    continue
                best = ious[d_index, g_index]
                match = g_index
            if match == -1:
                continue
            dt_ignore[t_index, d_index] = gt_ignore[match]
            dt_matched[t_index, d_index] = True
            gt_matched[t_index, match] = True

    outside = np.array([not _in_range(d.bbox[2] * d.bbox[3], area_range) for d in dets], dtype=bool)
    dt_ignore |= ~dt_matched & outside[None, :]
    return _ImageResult(
        scores=np.array([d.score for d in dets], dtype=np.float64),
        matched=dt_matched,
        ignored=dt_ignore,
        num_positive=int((~gt_ignore).sum()),
    )


def _interpolated_precision(results: List[_ImageResult], iou_thresholds: np.ndarray) -> np.ndarray:
    """(T,) 101-point interpolated AP, or -1 where no positive ground truth exists"""
    num_positive = sum(r.num_positive for r in results)
    if num_positive == 0:
        return np.full(len(iou_thresholds), -1.0)
    if not results:
        return np.zeros(len(iou_thresholds))
    scores = np.concatenate([r.scores for r in results])
    order = np.argsort(-scores, kind="mergesort")
    matched = np.concatenate([r.matched for r in results], axis=1)[:, order]
    ignored = np.concatenate([r.ignored for r in results], axis=1)[:, order]

    tps = np.logical_and(matched, ~ignored)
    fps = np.logical_and(~matched, ~ignored)
    tp_sum = np.cumsum(tps, axis=1).astype(dtype=float)
    fp_sum = np.cumsum(fps, axis=1).astype(dtype=float)

    ap = np.zeros(len(iou_thresholds))
    for t_index, (tp, fp) in enumerate(zip(tp_sum, fp_sum)):
        num_dets = len(tp)
        q = np.zeros(len(RECALL_THRESHOLDS))
        if num_dets:
            recall = tp / num_positive
            precision = (tp / (fp + tp + np.spacing(1))).tolist()
            for i in range(num_dets - 1, 0, -1):
                if precision[i] > precision[i - 1]:
                    precision[i - 1] = precision[i]
            indices = np.searchsorted(recall, RECALL_THRESHOLDS, side="left")
            for r_index, p_index in enumerate(indices):
                if p_index >= num_dets:
                    break
                q[r_index] = precision[p_index]
        ap[t_index] = np.mean(q)
    return ap


def _group(items: Iterable, category_id: int) -> Dict[int, List]:
    grouped = defaultdict(list)
    for item in items:
        if item.category_id == category_id:
            grouped[item.image_id].append(item)
    return grouped


def _evaluate_category(predictions: Sequence[Detection], ground_truths: Sequence[GroundTruthBox],
                       image_ids: Sequence[int], category_id: int, area_range: Tuple[float, float],
                       iou_thresholds: np.ndarray, max_dets: int) -> np.ndarray:
    dets_by_image = _group(predictions, category_id)
    gts_by_image = _group(ground_truths, category_id)
    results = []
    for image_id in image_ids:
        result = _evaluate_image(dets_by_image.get(image_id, []), gts_by_image.get(image_id, []),
                                 area_range, iou_thresholds, max_dets)
        if result is not None:
            results.append(result)
    return _interpolated_precision(results, iou_thresholds)


def _validate(predictions: Sequence[Detection], ground_truths: Sequence[GroundTruthBox]) -> None:
    for item in list(predictions) + list(ground_truths):
        _check_box(item.bbox)
    for det in predictions:
        if not np.isfinite(det.score):
            raise ContractError(f"detection score must be finite, got {det.score}")


def _image_ids(predictions, ground_truths, image_ids) -> List[int]:
    if image_ids is not None:
        return sorted(set(int(i) for i in image_ids))
    return sorted({d.image_id for d in predictions} | {g.image_id for g in ground_truths})


def compute_ap_at_iou(predictions: Sequence[Detection], ground_truths: Sequence[GroundTruthBox],
                      iou_threshold: float, class_id: int, area: str = "all",
                      max_dets: int = MAX_DETECTIONS, image_ids: Optional[Sequence[int]] = None) -> float:
    """AP of one class at one IoU threshold; -1 when the class has no ground truth"""
    _validate(predictions, ground_truths)
    ap = _evaluate_category(predictions, ground_truths, _image_ids(predictions, ground_truths, image_ids),
                            class_id, AREA_RANGES[area], np.array([iou_threshold]), max_dets)
    return float(ap[0])


def _mean_valid(values: np.ndarray) -> float:
    valid = values[values > -1]
    return float(np.mean(valid)) if valid.size else -1.0


def compute_coco_map(predictions: Sequence[Detection], ground_truths: Sequence[GroundTruthBox],
                     image_ids: Optional[Sequence[int]] = None, category_ids: Optional[Sequence[int]] = None,
                     max_dets: int = MAX_DETECTIONS, workers: int = 1) -> EvalReport:
    """Full COCO box evaluation; mAP is the mean of the ten per-threshold APs"""
    _validate(predictions, ground_truths)
    images = _image_ids(predictions, ground_truths, image_ids)
    if category_ids is None:
        category_ids = sorted({g.category_id for g in ground_truths} | {d.category_id for d in predictions})
    category_ids = list(category_ids)

    per_area: Dict[str, np.ndarray] = {}
    for area_name, area_range in AREA_RANGES.items():
        def evaluate(category_id: int, area_range=area_range) -> np.ndarray:
            return _evaluate_category(predictions, ground_truths, images, category_id,
                                      area_range, IOU_THRESHOLDS, max_dets)

        if workers > 1 and len(category_ids) > 1:
            with ThreadPoolExecutor(max_workers=workers) as pool:
                rows = list(pool.map(evaluate, category_ids))
        else:
            rows = [evaluate(category_id) for category_id in category_ids]
        per_area[area_name] = np.array(rows).reshape(len(category_ids), len(IOU_THRESHOLDS))

    overall = per_area["all"]
    ap_per_threshold = [_mean_valid(overall[:, t]) for t in range(len(IOU_THRESHOLDS))]
    valid = all(ap > -1 for ap in ap_per_threshold)
    report = EvalReport(
        ap_per_threshold=ap_per_threshold,
        map=float(np.mean(ap_per_threshold)) if valid else -1.0,
        ap50=ap_per_threshold[0],
        ap75=ap_per_threshold[5],
        ap_small=_mean_valid(per_area["small"]),
        ap_medium=_mean_valid(per_area["medium"]),
        ap_large=_mean_valid(per_area["large"]),
        per_class={cid: _mean_valid(overall[k]) for k, cid in enumerate(category_ids)},
    )
    logger.debug("Evaluated %d images, %d categories: AP %.4f", len(images), len(category_ids), report.map)
    return report


def detections_from_coco_results(results: Sequence[Dict]) -> List[Detection]:
    return [Detection(int(r["image_id"]), int(r["category_id"]), tuple(float(v) for v in r["bbox"]),
                      float(r["score"])) for r in results]


def ground_truths_from_coco(annotations: Dict) -> Tuple[List[GroundTruthBox], List[int], List[int]]:
    """(boxes, image ids, category ids) from a COCO annotation document"""
    boxes = [
        GroundTruthBox(int(a["image_id"]), int(a["category_id"]), tuple(float(v) for v in a["bbox"]),
                       float(a["area"]) if "area" in a else None, bool(a.get("iscrowd", 0)))
        for a in annotations.get("annotations", [])
    ]
    image_ids = [int(image["id"]) for image in annotations.get("images", [])]
    category_ids = [int(c["id"]) for c in annotations.get("categories", [])]
    return boxes, image_ids, category_ids
