"""Saliency-map and localization quality metrics.

Map metrics follow the conventions of the standard salient-object-detection
benchmark scripts: MAE, the weighted F-measure with beta^2 = 0.3 in adaptive
/ mean / max variants over 256 thresholds, the structure measure (object plus
region terms, alpha = 0.5), and the enhanced-alignment measure in the same
three variants.  One deliberate deviation from the widely copied scripts: the
enhanced-alignment score is averaged over all N pixels rather than N - 1, so
a perfect prediction scores exactly 1 regardless of image size and every
score stays inside [0, 1].

Localization quality matches selected boxes against the connected components
of the ground-truth mask (IOU above 0.5, greedy best-first) and aggregates
precision / recall / F over the dataset.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .dataio import BBox
from .errors import ValidationError
from .proposals import iou as box_iou
from .validation import check_binary_map, check_map, check_same_shape

_EPS = np.finfo(np.float64).eps


@dataclass(frozen=True)
class MetricConfig:
    beta_sq: float = 0.3
    s_alpha: float = 0.5
    n_thresholds: int = 256
    iou_threshold: float = 0.5

    def __post_init__(self):
        if self.beta_sq <= 0:
            raise ValidationError(f"beta_sq must be > 0, got {self.beta_sq}")
        if not (0.0 <= self.s_alpha <= 1.0):
            raise ValidationError(f"s_alpha must be in [0, 1], got "
                                  f"{self.s_alpha}")
        if self.n_thresholds < 1:
            raise ValidationError(f"n_thresholds must be >= 1, got "
                                  f"{self.n_thresholds}")
        if not (0.0 < self.iou_threshold < 1.0):
            raise ValidationError(f"iou_threshold must be in (0, 1), got "
                                  f"{self.iou_threshold}")


def _check_pair(pred, gt):
    pred = check_map(pred, "prediction")
    gt = check_binary_map(gt, "ground truth")
    check_same_shape(pred, gt, "prediction", "ground truth")
    return pred, gt


def mae(pred: np.ndarray, gt: np.ndarray) -> float:
    """Mean absolute error between a prediction and a binary mask."""
    pred, gt = _check_pair(pred, gt)
    return float(np.abs(pred - gt).mean())


def f_from_pr(precision: float, recall: float, beta_sq: float = 0.3) -> float:
    """F-measure from precision and recall; 0 when both are 0."""
    denom = beta_sq * precision + recall
    if denom == 0:
        return 0.0
    return (1 + beta_sq) * precision * recall / denom


def _precision_recall(binary: np.ndarray, gt: np.ndarray) -> tuple[float, float]:
    tp = float(np.logical_and(binary, gt == 1).sum())
    n_pred = float(binary.sum())
    n_gt = float((gt == 1).sum())
    precision = tp / n_pred if n_pred > 0 else 0.0
    recall = tp / n_gt if n_gt > 0 else 0.0
    return precision, recall


def _thresholds(n: int) -> np.ndarray:
    # (k + 1) / n for k = 0..n-1: excludes 0, includes 1, so an exact binary
    # prediction stays binarized to itself at every threshold.
    return (np.arange(n, dtype=np.float64) + 1.0) / n


def _adaptive_threshold(pred: np.ndarray) -> float:
    return min(2.0 * float(pred.mean()), 1.0)


def f_measure(pred: np.ndarray, gt: np.ndarray,
              cfg: MetricConfig = MetricConfig(), mode: str = "adp") -> float:
    """Weighted F-measure; ``mode`` is one of adp / mean / max.

    ``adp`` binarizes at twice the prediction mean (capped at 1); the other
    modes sweep ``n_thresholds`` evenly spaced cuts and take the mean or the
    maximum of the per-threshold scores.
    """
    pred, gt = _check_pair(pred, gt)
    if mode == "adp":
        p, r = _precision_recall(pred >= _adaptive_threshold(pred), gt)
        return f_from_pr(p, r, cfg.beta_sq)
    if mode not in ("mean", "max"):
        raise ValidationError(f"unknown f_measure mode '{mode}'")
    scores = np.empty(cfg.n_thresholds)
    for i, t in enumerate(_thresholds(cfg.n_thresholds)):
        p, r = _precision_recall(pred >= t, gt)
        scores[i] = f_from_pr(p, r, cfg.beta_sq)
    return float(scores.mean() if mode == "mean" else scores.max())


# ---------------------------------------------------------------------------
# structure measure


def _s_object_half(values: np.ndarray) -> float:
    x = float(values.mean())
    sigma = float(values.std())
    return 2.0 * x / (x * x + 1.0 + sigma + _EPS)


def _s_object(pred: np.ndarray, gt: np.ndarray) -> float:
    u = float(gt.mean())
    fg_score = _s_object_half(pred[gt == 1])
    bg_score = _s_object_half(1.0 - pred[gt == 0])
    return u * fg_score + (1.0 - u) * bg_score


def _region_ssim(pred: np.ndarray, gt: np.ndarray) -> float:
    n = pred.size
    if n == 0:
        return 0.0
    x, y = float(pred.mean()), float(gt.mean())
    if n == 1:
        sigma_x = sigma_y = sigma_xy = 0.0
    else:
        sigma_x = float(((pred - x) ** 2).sum()) / (n - 1)
        sigma_y = float(((gt - y) ** 2).sum()) / (n - 1)
        sigma_xy = float(((pred - x) * (gt - y)).sum()) / (n - 1)
    alpha = 4.0 * x * y * sigma_xy
    beta = (x * x + y * y) * (sigma_x + sigma_y)
    if alpha != 0.0:
        return alpha / (beta + _EPS)
    return 1.0 if beta == 0.0 else 0.0


def _centroid(gt: np.ndarray) -> tuple[int, int]:
    h, w = gt.shape
    total = gt.sum()
    if total == 0:
        return w // 2, h // 2
    col = int(np.round((gt.sum(axis=0) * np.arange(w)).sum() / total))
    row = int(np.round((gt.sum(axis=1) * np.arange(h)).sum() / total))
    return col, row


def _s_region(pred: np.ndarray, gt: np.ndarray) -> float:
    h, w = gt.shape
    cx, cy = _centroid(gt)
    total = float(h * w)
    score = 0.0
    for rows, cols in ((slice(0, cy + 1), slice(0, cx + 1)),
                       (slice(0, cy + 1), slice(cx + 1, w)),
                       (slice(cy + 1, h), slice(0, cx + 1)),
                       (slice(cy + 1, h), slice(cx + 1, w))):
        gt_part = gt[rows, cols]
        weight = gt_part.size / total
        if gt_part.size:
            score += weight * _region_ssim(pred[rows, cols], gt_part)
    return score


def s_measure(pred: np.ndarray, gt: np.ndarray,
              cfg: MetricConfig = MetricConfig()) -> float:
    """Structure measure: alpha-blend of object- and region-level similarity.

    Degenerate masks short-circuit: an all-background mask scores
    ``1 - mean(pred)`` and an all-foreground mask scores ``mean(pred)``.
    """
    pred, gt = _check_pair(pred, gt)
    u = float(gt.mean())
    if u == 0.0:
        return 1.0 - float(pred.mean())
    if u == 1.0:
        return float(pred.mean())
    score = cfg.s_alpha * _s_object(pred, gt) \
        + (1.0 - cfg.s_alpha) * _s_region(pred, gt)
    return max(score, 0.0)


# ---------------------------------------------------------------------------
# enhanced-alignment measure


def _e_align(binary: np.ndarray, gt: np.ndarray) -> float:
    n = gt.size
    if np.all(gt == 0):
        enhanced = 1.0 - binary.astype(np.float64)
    elif np.all(gt == 1):
        enhanced = binary.astype(np.float64)
    else:
        d_gt = gt - gt.mean()
        d_fm = binary.astype(np.float64) - binary.mean()
        align = 2.0 * d_gt * d_fm / (d_gt * d_gt + d_fm * d_fm + _EPS)
        enhanced = (align + 1.0) ** 2 / 4.0
    return float(enhanced.sum()) / n


def e_measure(pred: np.ndarray, gt: np.ndarray,
              cfg: MetricConfig = MetricConfig(), mode: str = "adp") -> float:
    """Enhanced-alignment measure; ``mode`` is one of adp / mean / max."""
    pred, gt = _check_pair(pred, gt)
    if mode == "adp":
        return _e_align(pred >= _adaptive_threshold(pred), gt)
    if mode not in ("mean", "max"):
        raise ValidationError(f"unknown e_measure mode '{mode}'")
    scores = np.empty(cfg.n_thresholds)
    for i, t in enumerate(_thresholds(cfg.n_thresholds)):
        scores[i] = _e_align(pred >= t, gt)
    return float(scores.mean() if mode == "mean" else scores.max())


# ---------------------------------------------------------------------------
# localization precision / recall


def gt_object_boxes(mask: np.ndarray) -> list[BBox]:
    """Tight boxes around the 8-connected components of a binary mask."""
    mask = check_binary_map(mask, "mask")
    labeled, count = ndimage.label(mask, structure=np.ones((3, 3), dtype=int))
    boxes = []
    for sl in ndimage.find_objects(labeled):
        if sl is None:
            continue
        rows, cols = sl
        boxes.append(BBox(x=int(cols.start), y=int(rows.start),
                          w=int(cols.stop - cols.start),
                          h=int(rows.stop - rows.start)))
    return boxes


def _match_boxes(selected: list[BBox], gt_boxes: list[BBox],
                 threshold: float) -> int:
    """Greedy best-first one-to-one matching; returns the match count."""
    candidates = []
    for si, sb in enumerate(selected):
        for gi, gb in enumerate(gt_boxes):
            value = box_iou(sb, gb)
            if value > threshold:
                candidates.append((-value, si, gi))
    candidates.sort()
    used_s, used_g = set(), set()
    for _, si, gi in candidates:
        if si in used_s or gi in used_g:
            continue
        used_s.add(si)
        used_g.add(gi)
    return len(used_s)


def localization_prf(selected_per_image: list[list[BBox]],
                     gt_masks: list[np.ndarray],
                     cfg: MetricConfig = MetricConfig()) -> tuple[float, float, float]:
    """Dataset-level precision / recall / F of selected object boxes.

    Ground-truth objects are the connected components of each mask; a
    selected box counts as a hit when its IOU with an unmatched object box
    exceeds ``cfg.iou_threshold``.  Totals are aggregated over images before
    the ratios are taken.
    """
    if len(selected_per_image) != len(gt_masks):
        raise ValidationError(f"localization_prf: {len(selected_per_image)} "
                              f"selections vs {len(gt_masks)} masks")
    tp = n_selected = n_objects = 0
    for selected, mask in zip(selected_per_image, gt_masks):
        gt_boxes = gt_object_boxes(mask)
        tp += _match_boxes(selected, gt_boxes, cfg.iou_threshold)
        n_selected += len(selected)
        n_objects += len(gt_boxes)
    precision = tp / n_selected if n_selected else 0.0
    recall = tp / n_objects if n_objects else 0.0
    return precision, recall, f_from_pr(precision, recall, cfg.beta_sq)


# ---------------------------------------------------------------------------
# dataset-level report

MAP_METRIC_NAMES = ("Smeasure", "MAE", "adpEm", "meanEm", "maxEm",
                    "adpFm", "meanFm", "maxFm")


def evaluate_map(pred: np.ndarray, gt: np.ndarray,
                 cfg: MetricConfig = MetricConfig()) -> dict[str, float]:
    """All map metrics for one prediction/mask pair."""
    return {
        "Smeasure": s_measure(pred, gt, cfg),
        "MAE": mae(pred, gt),
        "adpEm": e_measure(pred, gt, cfg, "adp"),
        "meanEm": e_measure(pred, gt, cfg, "mean"),
        "maxEm": e_measure(pred, gt, cfg, "max"),
        "adpFm": f_measure(pred, gt, cfg, "adp"),
        "meanFm": f_measure(pred, gt, cfg, "mean"),
        "maxFm": f_measure(pred, gt, cfg, "max"),
    }


def evaluate_dataset(preds: list[np.ndarray], gts: list[np.ndarray],
                     cfg: MetricConfig = MetricConfig()) -> dict:
    """Per-image map metrics plus their dataset means."""
    if len(preds) != len(gts):
        raise ValidationError(f"evaluate_dataset: {len(preds)} predictions vs "
                              f"{len(gts)} masks")
    if not preds:
        raise ValidationError("evaluate_dataset: empty input")
    per_image = [evaluate_map(p, g, cfg) for p, g in zip(preds, gts)]
    means = {name: float(np.mean([m[name] for m in per_image]))
             for name in MAP_METRIC_NAMES}
    return {"per_image": per_image, "mean": means}
