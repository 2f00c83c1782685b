"""Box arithmetic: IoU, bounds clamping, and greedy ground-truth matching."""

from __future__ import annotations

from typing import Optional, Sequence

Box = tuple[float, float, float, float]  # x, y, w, h


class GeometryError(ValueError):
    pass


def iou(a: Box, b: Box) -> float:
    """Intersection over union of two (x, y, w, h) boxes."""
    ax, ay, aw, ah = a
    bx, by, bw, bh = b
    x1 = max(ax, bx)
    y1 = max(ay, by)
    x2 = min(ax + aw, bx + bw)
    y2 = min(ay + ah, by + bh)
    iw = max(0.0, x2 - x1)
    ih = max(0.0, y2 - y1)
    inter = iw * ih
    union = aw * ah + bw * bh - inter
    return inter / union if union > 0 else 0.0


def clamp_box(box: Box, width: int, height: int, padding: float = 0.0) -> Box:
    """Pad a box, then clip it to the image bounds.

    Raises when nothing remains: a crop outside the image has no pixels.
    """
    x, y, w, h = box
    x -= padding
    y -= padding
    w += 2 * padding
    h += 2 * padding
    x1 = max(x, 0.0)
    y1 = max(y, 0.0)
    x2 = min(x + w, float(width))
    y2 = min(y + h, float(height))
    if x2 - x1 < 1.0 or y2 - y1 < 1.0:
        raise GeometryError(
            f"box {box} is empty after clamping to {width}x{height}"
        )
    return (x1, y1, x2 - x1, y2 - y1)


def match_ground_truth(
    boxes: Sequence[Box], gt_boxes: Sequence[Box]
) -> list[float]:
    """Greedy best-overlap match: detections in order, each taking its
    highest-IoU ground-truth box among those not yet consumed.

    Detections with no overlapping ground truth left score 0.0.
    """
    taken: set[int] = set()
    out: list[float] = []
    for box in boxes:
        best_j: Optional[int] = None
        best = 0.0
        for j, gt in enumerate(gt_boxes):
            if j in taken:
                continue
            v = iou(box, gt)
            if v > best:
                best = v
                best_j = j
        if best_j is not None:
            taken.add(best_j)
        out.append(best)
    return out
