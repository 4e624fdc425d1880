"""Synthetic dataset generation for tests and end-to-end runs.

Each generated image carries a handful of mutually disjoint proposal boxes
placed on a grid, one of which is planted as the salient object: its latent
saliency is drawn well above everyone else's, the ground-truth mask is
exactly its box, and every candidate saliency map paints each box with its
latent value (plus optional noise).  Latents are drawn on the 1/255 grid and
kept distinct within an image, so with zero noise the written PGM maps
reproduce them exactly and box-level model scores rank proposals in exact
latent order.

Proposal features are standard normal vectors with the latent planted along
a fixed random unit direction, which makes pair ranking a learnable linear
problem; whole-image features and scene descriptors carry a light cluster
structure so retrieval has something to find.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .dataio import save_manifest, write_feature_blob, write_map
from .errors import ValidationError

# latent byte ranges: ordinary boxes vs the planted salient box
_LATENT_LOW = (13, 140)     # ~0.05 .. 0.55
_LATENT_HIGH = (191, 242)   # ~0.75 .. 0.95


@dataclass(frozen=True)
class SyntheticConfig:
    """Knobs for the generated dataset."""

    n_images: int = 20
    proposals_per_image: int = 5
    image_size: int = 64
    n_maps: int = 5
    noise: float = 0.0
    feature_dim: int = 4096
    descriptor_dim: int = 128
    n_clusters: int = 4
    latent_scale: float = 30.0  # feature-space magnitude of the latent
    seed: int = 0

    def __post_init__(self):
        if self.n_images < 1 or self.proposals_per_image < 1:
            raise ValidationError("synthetic: need >= 1 image and proposal")
        if self.image_size < 16:
            raise ValidationError(f"synthetic: image_size must be >= 16, got "
                                  f"{self.image_size}")
        if self.n_maps < 1:
            raise ValidationError("synthetic: need >= 1 candidate map")
        if self.noise < 0:
            raise ValidationError(f"synthetic: noise must be >= 0, got "
                                  f"{self.noise}")
        if self.proposals_per_image > 16:
            raise ValidationError("synthetic: at most 16 proposals per image")


def latent_direction(dim: int, seed: int = 0) -> np.ndarray:
    """The unit vector along which latent saliency is planted in features."""
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0x5EED]))
    v = rng.normal(size=dim)
    return v / np.linalg.norm(v)


def _grid_boxes(n: int, size: int, rng: np.random.Generator):
    """n mutually disjoint boxes, one per cell of a near-square grid."""
    cols = math.ceil(math.sqrt(n))
    rows = math.ceil(n / cols)
    cell_w, cell_h = size // cols, size // rows
    boxes = []
    for k in range(n):
        r, c = divmod(k, cols)
        w = int(rng.integers(max(4, cell_w // 3), cell_w))
        h = int(rng.integers(max(4, cell_h // 3), cell_h))
        x = c * cell_w + int(rng.integers(0, cell_w - w + 1))
        y = r * cell_h + int(rng.integers(0, cell_h - h + 1))
        boxes.append((x, y, w, h))
    return boxes


def _distinct_bytes(rng: np.random.Generator, lo: int, hi: int,
                    count: int) -> np.ndarray:
    return rng.choice(np.arange(lo, hi + 1), size=count, replace=False)


def _planted_feature(rng: np.random.Generator, dim: int,
                     direction: np.ndarray, target: float) -> np.ndarray:
    f = rng.normal(size=2 * dim)
    return f + (target - f @ direction) * direction


def generate_fixture(cfg: SyntheticConfig, out_dir) -> Path:
    """Write a full synthetic dataset under ``out_dir``; returns the manifest.

    Deterministic: the same config writes byte-identical files.
    """
    out = Path(out_dir)
    (out / "maps").mkdir(parents=True, exist_ok=True)
    (out / "gt").mkdir(exist_ok=True)

    rng = np.random.default_rng(cfg.seed)
    direction = latent_direction(2 * cfg.feature_dim, cfg.seed)
    sem_centers = rng.normal(size=(cfg.n_clusters, cfg.feature_dim))
    scene_centers = rng.normal(size=(cfg.n_clusters, cfg.descriptor_dim))

    features: list[np.ndarray] = []
    descriptors: list[np.ndarray] = []
    images = []
    size = cfg.image_size

    for i in range(cfg.n_images):
        rec_id = f"img{i:03d}"
        n = cfg.proposals_per_image
        boxes = _grid_boxes(n, size, rng)
        planted = int(rng.integers(0, n))
        latent_bytes = np.empty(n, dtype=int)
        low = _distinct_bytes(rng, *_LATENT_LOW, n)  # one draw is replaced
        latent_bytes[:] = low
        latent_bytes[planted] = int(_distinct_bytes(rng, *_LATENT_HIGH, 1)[0])
        latents = latent_bytes / 255.0

        cluster = int(rng.integers(0, cfg.n_clusters))
        image_feature = sem_centers[cluster] + 0.3 * rng.normal(size=cfg.feature_dim)
        image_feature_ref = len(features)
        features.append(image_feature)

        scene_cluster = int(rng.integers(0, cfg.n_clusters))
        descriptors.append(scene_centers[scene_cluster]
                           + 0.3 * rng.normal(size=cfg.descriptor_dim))

        proposals = []
        for k in range(n):
            target = latents[k] * cfg.latent_scale
            planted_vec = _planted_feature(rng, cfg.feature_dim, direction,
                                           target)
            f_ref = len(features)
            features.append(planted_vec[:cfg.feature_dim])
            features.append(planted_vec[cfg.feature_dim:])
            proposals.append({
                "id": f"p{k}",
                "box": list(boxes[k]),
                "confidence": round(float(rng.uniform(0.5, 1.0)), 6),
                "feature": f_ref,
                "context_feature": f_ref + 1,
            })

        canvas = np.zeros((size, size))
        for k, (x, y, w, h) in enumerate(boxes):
            canvas[y:y + h, x:x + w] = latents[k]
        map_paths = []
        for m in range(cfg.n_maps):
            noisy = canvas
            if cfg.noise > 0:
                noisy = np.clip(canvas + rng.normal(0.0, cfg.noise,
                                                    size=canvas.shape), 0.0, 1.0)
            rel = f"maps/{rec_id}_m{m}.pgm"
            write_map(noisy, out / rel)
            map_paths.append(rel)

        gt = np.zeros((size, size))
        px, py, pw, ph = boxes[planted]
        gt[py:py + ph, px:px + pw] = 1.0
        gt_rel = f"gt/{rec_id}.pgm"
        write_map(gt, out / gt_rel)

        images.append({
            "id": rec_id,
            "width": size,
            "height": size,
            "gt_mask": gt_rel,
            "candidate_maps": map_paths,
            "image_feature": image_feature_ref,
            "scene_descriptor": i,
            "proposals": proposals,
        })

    write_feature_blob(np.stack(features).astype(np.float32), out / "features.srf")
    write_feature_blob(np.stack(descriptors).astype(np.float32),
                       out / "descriptors.srf")
    manifest = {
        "feature_blob": "features.srf",
        "descriptor_blob": "descriptors.srf",
        "images": images,
    }
    path = out / "manifest.json"
    save_manifest(manifest, path)
    return path


def make_ranking_pairs(n_pairs: int, dim: int = 8192, gap: float = 10.0,
                       spread: float = 20.0, seed: int = 0):
    """Linearly separable pair-ranking problem with a margin-scaled gap.

    Returns ``(f1, f2, labels)`` where each feature is standard normal with a
    latent score planted along :func:`latent_direction`; the two sides of
    every pair differ by at least ``gap`` in latent score and the label is
    the sign of the difference.
    """
    if n_pairs < 1 or dim < 2 or dim % 2:
        raise ValidationError(f"make_ranking_pairs: bad n_pairs {n_pairs} or "
                              f"dim {dim}")
    if gap <= 0 or spread <= 0:
        raise ValidationError("make_ranking_pairs: gap and spread must be > 0")
    rng = np.random.default_rng(seed)
    direction = latent_direction(dim, seed)
    t1 = rng.uniform(-spread, spread, size=n_pairs)
    delta = rng.uniform(gap, 2.0 * gap, size=n_pairs) \
        * rng.choice([-1.0, 1.0], size=n_pairs)
    t2 = t1 + delta
    f1 = rng.normal(size=(n_pairs, dim))
    f2 = rng.normal(size=(n_pairs, dim))
    f1 += (t1 - f1 @ direction)[:, None] * direction[None, :]
    f2 += (t2 - f2 @ direction)[:, None] * direction[None, :]
    labels = np.where(t1 > t2, 1, -1)
    return f1.astype(np.float32), f2.astype(np.float32), labels
