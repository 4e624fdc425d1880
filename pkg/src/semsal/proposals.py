"""Object-proposal geometry: IOU, overlap filtering, context enlargement."""

from __future__ import annotations

import math
from dataclasses import dataclass

from .dataio import BBox, ObjectProposal
from .errors import ValidationError


@dataclass(frozen=True)
class FilterConfig:
    """Greedy overlap-suppression settings for raw proposal lists."""

    iou_threshold: float = 0.5
    max_proposals: int = 10

    def __post_init__(self):
        if not (0.0 < self.iou_threshold <= 1.0):
            raise ValidationError(f"iou_threshold must be in (0, 1], got "
                                  f"{self.iou_threshold}")
        if self.max_proposals < 1:
            raise ValidationError(f"max_proposals must be >= 1, got "
                                  f"{self.max_proposals}")


def iou(a: BBox, b: BBox) -> float:
    """Intersection-over-union of two boxes; 0 when disjoint."""
    ix = min(a.x2, b.x2) - max(a.x, b.x)
    iy = min(a.y2, b.y2) - max(a.y, b.y)
    if ix <= 0 or iy <= 0:
        return 0.0
    inter = ix * iy
    return inter / float(a.area + b.area - inter)


def filter_proposals(proposals: list[ObjectProposal],
                     cfg: FilterConfig = FilterConfig()) -> list[ObjectProposal]:
    """Suppress overlapping proposals, keep the most confident survivors.

    Proposals are visited largest-area first (confidence, then id break
    ties) and kept only when their IOU with every already-kept box stays
    below ``cfg.iou_threshold``.  The survivors are then capped at
    ``cfg.max_proposals`` by confidence and returned in descending
    confidence order (id breaks ties), so the result is stable and applying
    the filter twice changes nothing.
    """
    visit = sorted(proposals, key=lambda p: (-p.box.area, -p.confidence, p.id))
    kept: list[ObjectProposal] = []
    for cand in visit:
        if all(iou(cand.box, k.box) < cfg.iou_threshold for k in kept):
            kept.append(cand)
    kept.sort(key=lambda p: (-p.confidence, p.id))
    return kept[:cfg.max_proposals]


def enlarge(box: BBox, factor: float, image_width: int, image_height: int) -> BBox:
    """Scale a box about its center by ``factor`` >= 1, clamped to the image.

    New sides are rounded half-up; when the enlarged box sticks out it is
    translated back inside first and only truncated if a side exceeds the
    image itself.
    """
    if factor < 1.0:
        raise ValidationError(f"enlargement factor must be >= 1, got {factor}")
    if image_width < box.x2 or image_height < box.y2:
        raise ValidationError(f"box {box.as_tuple()} lies outside image "
                              f"{image_width}x{image_height}")

    def _axis(origin: int, side: int, limit: int) -> tuple[int, int]:
        new_side = int(math.floor(factor * side + 0.5))
        center = origin + side / 2.0
        new_origin = int(math.floor(center - new_side / 2.0 + 0.5))
        if new_side >= limit:
            return 0, limit
        new_origin = min(max(new_origin, 0), limit - new_side)
        return new_origin, new_side

    nx, nw = _axis(box.x, box.w, image_width)
    ny, nh = _axis(box.y, box.h, image_height)
    return BBox(nx, ny, nw, nh)
