import logging
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

logger = logging.getLogger(__name__)


@dataclass
class ValidationReport:
    """Problems found while ingesting annotations; ingestion keeps going"""

    missing_images: List[str] = field(default_factory=list)
    clamped_boxes: int = 0
    dropped_boxes: int = 0
    unknown_categories: List[int] = field(default_factory=list)
    orphan_annotations: int = 0
    crowd_annotations: int = 0

    @property
    def is_clean(self) -> bool:
        return not (self.missing_images or self.clamped_boxes or self.dropped_boxes
                    or self.unknown_categories or self.orphan_annotations)

    def to_dict(self) -> Dict:
        return {
            "missing_images": list(self.missing_images),
            "clamped_boxes": self.clamped_boxes,
            "dropped_boxes": self.dropped_boxes,
            "unknown_categories": sorted(set(self.unknown_categories)),
            "orphan_annotations": self.orphan_annotations,
            "crowd_annotations": self.crowd_annotations,
        }

    def log_summary(self, source: str) -> None:
        if self.is_clean:
            logger.info("Validated %s: no issues", source)
            return
        logger.warning(
            "Validated %s: %d missing images, %d clamped boxes, %d dropped boxes, "
            "%d unknown categories, %d orphan annotations",
            source, len(self.missing_images), self.clamped_boxes, self.dropped_boxes,
            len(set(self.unknown_categories)), self.orphan_annotations,
        )


def clamp_xywh(box: Tuple[float, float, float, float], width: int,
               height: int) -> Tuple[Optional[Tuple[float, float, float, float]], bool]:
    """Clip a pixel xywh box to the image; returns (box or None if degenerate, was_clamped)"""
    x, y, w, h = (float(v) for v in box)
    x0, y0 = max(0.0, x), max(0.0, y)
    x1, y1 = min(float(width), x + w), min(float(height), y + h)
    clamped = (x0, y0, x1, y1) != (x, y, x + w, y + h)
    if x1 <= x0 or y1 <= y0:
        return None, clamped
    return (x0, y0, x1 - x0, y1 - y0), clamped
