"""Confidence-weighted fusion of candidate saliency maps.

Each candidate map is scored against the coarse object mask twice: locally
(mean ratio of map to mask over one selected box) and globally (a smoothed
min/max-style agreement averaged over all pixels).  The fused map is the
confidence-weighted sum of masked candidate maps, normalized to a unit
maximum, and is exactly zero outside the union of selected boxes.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dataio import BBox
from .errors import ValidationError
from .validation import check_binary_map, check_map, check_same_shape


@dataclass(frozen=True)
class FusionConfig:
    """Weights for the fusion confidence and output normalization."""

    balance: float = 0.5       # weight of the global agreement term
    stabilizer: float = 1e-6   # keeps the agreement ratio finite on zeros
    normalize: str = "max"     # "max" or "none"

    def __post_init__(self):
        if self.balance < 0:
            raise ValidationError(f"balance must be >= 0, got {self.balance}")
        if self.stabilizer <= 0:
            raise ValidationError(f"stabilizer must be > 0, got "
                                  f"{self.stabilizer}")
        if self.normalize not in ("max", "none"):
            raise ValidationError(f"unknown normalization '{self.normalize}'")


def confidence(saliency: np.ndarray, coarse: np.ndarray, box: BBox,
               cfg: FusionConfig = FusionConfig()) -> float:
    """Confidence of one candidate map against the coarse mask at one box.

    The local term averages ``saliency / coarse`` over the box (the coarse
    mask is 1 there by construction); the global term averages
    ``(s * c + eps) / (s + c + eps)`` over the whole image, a ratio that
    rewards pixelwise agreement of the two maps: it approaches 1 where both
    are high or both are (near) zero, and falls toward 0 where they disagree.
    Raising saliency inside the box never decreases the result.
    """
    saliency = check_map(saliency, "saliency")
    coarse = check_binary_map(coarse, "coarse mask")
    check_same_shape(saliency, coarse, "saliency", "coarse mask")
    if not box.fits(coarse.shape[1], coarse.shape[0]):
        raise ValidationError(f"confidence: box {box.as_tuple()} exceeds map "
                              f"bounds {coarse.shape[1]}x{coarse.shape[0]}")
    if not np.all(coarse[box.slices()] == 1.0):
        raise ValidationError(f"confidence: box {box.as_tuple()} is not fully "
                              f"inside the coarse mask")
    local = float(saliency[box.slices()].mean())
    eps = cfg.stabilizer
    agreement = (saliency * coarse + eps) / (saliency + coarse + eps)
    return local + cfg.balance * float(agreement.mean())


def confidence_matrix(saliency_maps: list[np.ndarray], coarse: np.ndarray,
                      boxes: list[BBox],
                      cfg: FusionConfig = FusionConfig()) -> np.ndarray:
    """Confidence of every (candidate map, selected box) combination."""
    if not saliency_maps or not boxes:
        raise ValidationError("confidence_matrix: need at least one map and "
                              "one box")
    out = np.empty((len(saliency_maps), len(boxes)), dtype=np.float64)
    for i, sal in enumerate(saliency_maps):
        for j, box in enumerate(boxes):
            out[i, j] = confidence(sal, coarse, box, cfg)
    return out


def fuse(saliency_maps: list[np.ndarray], conf: np.ndarray,
         boxes: list[BBox], cfg: FusionConfig = FusionConfig()) -> np.ndarray:
    """Confidence-weighted sum of masked candidate maps.

    ``conf[i, j]`` weights candidate map i restricted to selected box j.
    With ``normalize == "max"`` the result is scaled to a unit maximum
    (all-zero input stays all-zero); pixels outside the union of boxes are
    exactly zero either way.
    """
    conf = np.asarray(conf, dtype=np.float64)
    if conf.shape != (len(saliency_maps), len(boxes)):
        raise ValidationError(f"fuse: confidence shape {conf.shape} does not "
                              f"match {len(saliency_maps)} maps x "
                              f"{len(boxes)} boxes")
    if not np.all(np.isfinite(conf)):
        raise ValidationError("fuse: non-finite confidence values")
    maps = [check_map(m, f"candidate map {i}")
            for i, m in enumerate(saliency_maps)]
    shape = maps[0].shape
    for i, m in enumerate(maps[1:], start=1):
        check_same_shape(m, maps[0], f"candidate map {i}", "candidate map 0")

    height, width = shape
    box_masks = []
    for box in boxes:
        if not box.fits(width, height):
            raise ValidationError(f"fuse: box {box.as_tuple()} exceeds map "
                                  f"bounds {width}x{height}")
        m = np.zeros(shape, dtype=np.float64)
        m[box.slices()] = 1.0
        box_masks.append(m)

    fused = np.zeros(shape, dtype=np.float64)
    for i, sal in enumerate(maps):
        weight = np.zeros(shape, dtype=np.float64)
        for j, mask in enumerate(box_masks):
            weight += conf[i, j] * mask
        fused += weight * sal
    if cfg.normalize == "max":
        peak = float(fused.max())
        if peak > 0:
            fused /= peak
    return fused


def fuse_image(saliency_maps: list[np.ndarray], coarse: np.ndarray,
               boxes: list[BBox],
               cfg: FusionConfig = FusionConfig()) -> tuple[np.ndarray, np.ndarray]:
    """Confidence matrix plus fused map in one call."""
    conf = confidence_matrix(saliency_maps, coarse, boxes, cfg)
    return conf, fuse(saliency_maps, conf, boxes, cfg)
