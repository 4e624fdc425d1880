"""Hybrid nearest-neighbor image retrieval.

For a query image the pipeline borrows proposals from a small set of similar
pool images, found by two Euclidean searches: a few neighbors in semantic
feature space (whole-image features) and the remainder in scene-descriptor
space, skipping anything the semantic pass already picked.  Results keep
that order: semantic picks first, then scene picks.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .dataio import Dataset, ImageRecord
from .descriptors import scene_descriptor
from .errors import ValidationError


@dataclass(frozen=True)
class RetrievalConfig:
    """Neighbor counts for the two retrieval passes."""

    count: int = 5
    semantic_count: int = 2
    scene_count: int = 3

    def __post_init__(self):
        if self.semantic_count < 1 or self.scene_count < 1:
            raise ValidationError("retrieval: both neighbor counts must be >= 1")
        if self.count != self.semantic_count + self.scene_count:
            raise ValidationError(f"retrieval: count {self.count} != "
                                  f"semantic {self.semantic_count} + scene "
                                  f"{self.scene_count}")


def ensure_scene_descriptors(dataset: Dataset, jobs: int = 1) -> None:
    """Fill ``scene_descriptor`` on every record, from blob or pixels."""
    pending = [rec for rec in dataset if rec.scene_descriptor is None]

    def _resolve(rec: ImageRecord) -> np.ndarray:
        if rec.scene_descriptor_ref is not None:
            return dataset.descriptors.get(rec.scene_descriptor_ref)
        img = dataset.image_gray(rec)
        if img is None:
            raise ValidationError(f"image '{rec.id}': no scene descriptor and "
                                  f"no pixel data to compute one from")
        return scene_descriptor(img)

    if jobs > 1 and len(pending) > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            resolved = list(pool.map(_resolve, pending))
    else:
        resolved = [_resolve(rec) for rec in pending]
    for rec, desc in zip(pending, resolved):
        rec.scene_descriptor = desc


def _nearest(query_vec: np.ndarray, candidates: list[tuple[str, np.ndarray]],
             k: int) -> list[str]:
    """Ids of the k candidates closest in Euclidean distance; ties by id."""
    if not candidates:
        return []
    ids = [cid for cid, _ in candidates]
    mat = np.stack([vec for _, vec in candidates])
    if mat.shape[1] != query_vec.shape[0]:
        raise ValidationError(f"retrieval: descriptor dim {mat.shape[1]} does "
                              f"not match query dim {query_vec.shape[0]}")
    dists = np.sqrt(((mat - query_vec[None, :]) ** 2).sum(axis=1))
    order = sorted(range(len(ids)), key=lambda i: (dists[i], ids[i]))
    return [ids[i] for i in order[:k]]


def retrieve_hybrid(query: ImageRecord, dataset: Dataset,
                    cfg: RetrievalConfig = RetrievalConfig()) -> list[str]:
    """Retrieve pool image ids for a query: semantic pass, then scene pass.

    The query itself is never returned.  When the pool is smaller than the
    requested count, every pool image is returned (semantic picks first).
    Ordering is deterministic: distance, then image id.
    """
    pool = [rec for rec in dataset if rec.id != query.id]
    if not pool:
        return []

    sem_query = dataset.image_feature(query)
    sem_candidates = [(rec.id, dataset.image_feature(rec)) for rec in pool]
    picked = _nearest(sem_query, sem_candidates, cfg.semantic_count)
    chosen = set(picked)

    if query.scene_descriptor is None:
        raise ValidationError(f"image '{query.id}': scene descriptor not "
                              f"resolved (run ensure_scene_descriptors first)")
    scene_candidates = []
    for rec in pool:
        if rec.id in chosen:
            continue
        if rec.scene_descriptor is None:
            raise ValidationError(f"image '{rec.id}': scene descriptor not "
                                  f"resolved (run ensure_scene_descriptors first)")
        scene_candidates.append((rec.id, rec.scene_descriptor))
    remaining = cfg.count - len(picked)
    picked += _nearest(query.scene_descriptor, scene_candidates, remaining)
    return picked


def retrieve_all(dataset: Dataset, cfg: RetrievalConfig = RetrievalConfig(),
                 jobs: int = 1) -> dict[str, list[str]]:
    """Neighbor lists for every image, keyed by image id, in manifest order."""
    ensure_scene_descriptors(dataset, jobs=jobs)

    def _one(rec: ImageRecord) -> list[str]:
        return retrieve_hybrid(rec, dataset, cfg)

    if jobs > 1 and len(dataset) > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_one, dataset.images))
    else:
        results = [_one(rec) for rec in dataset.images]
    return {rec.id: ids for rec, ids in zip(dataset.images, results)}
