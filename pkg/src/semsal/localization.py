"""Object localization from ranker scores.

Each proposal of an image is scored by counting how many other proposals it
strictly out-ranks, over the pool of the image's own proposals plus every
proposal of its retrieved images.  Sorting those win counts in descending
order, the number of salient objects is the position of the largest drop
between consecutive counts; the coarse object mask is the binary union of
the winning boxes.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dataio import BBox, Dataset, FeatureStore, ImageRecord, ObjectProposal
from .errors import ValidationError
from .pairs import multiscale_feature
from .proposals import FilterConfig, filter_proposals
from .ranker import RankerModel, forward


@dataclass(frozen=True)
class ScoreEntry:
    proposal_id: str
    box: BBox
    wins: int


@dataclass(frozen=True)
class ScoreTable:
    """Win counts for one image's proposals, sorted by (wins desc, id)."""

    image_id: str
    entries: tuple[ScoreEntry, ...]

    def descending(self) -> np.ndarray:
        return np.array([e.wins for e in self.entries], dtype=int)

    def top(self, q: int) -> list[ScoreEntry]:
        return list(self.entries[:q])


def win_counts(scores: np.ndarray, n_own: int) -> np.ndarray:
    """Strict-win counts for the first ``n_own`` scores against all others.

    ``scores`` holds the image's own proposals first, then every proposal
    borrowed from retrieved images.  Invariant to any strictly increasing
    transform of the scores.
    """
    scores = np.asarray(scores, dtype=np.float64)
    if scores.ndim != 1 or not (0 <= n_own <= scores.size):
        raise ValidationError(f"win_counts: bad scores shape {scores.shape} "
                              f"or own-count {n_own}")
    own = scores[:n_own]
    wins = (own[:, None] > scores[None, :]).sum(axis=1)
    return wins.astype(int)  # s_i > s_i is never true, so no self-win


def score_proposals(model: RankerModel, dataset: Dataset, rec: ImageRecord,
                    retrieved_ids: list[str],
                    filter_cfg: FilterConfig = FilterConfig()) -> ScoreTable:
    """Rank one image's proposals against its own plus retrieved proposals."""
    own = filter_proposals(rec.proposals, filter_cfg)
    if not own:
        return ScoreTable(image_id=rec.id, entries=())
    pool: list[ObjectProposal] = list(own)
    for other_id in retrieved_ids:
        other = dataset.get(other_id)
        if other.id == rec.id:
            raise ValidationError(f"image '{rec.id}': retrieved list contains "
                                  f"the image itself")
        pool.extend(filter_proposals(other.proposals, filter_cfg))
    feats = np.stack([multiscale_feature(p, dataset.features) for p in pool])
    scores = np.asarray(forward(model, feats), dtype=np.float64)
    wins = win_counts(scores, len(own))
    order = sorted(range(len(own)), key=lambda i: (-wins[i], own[i].id))
    entries = tuple(ScoreEntry(proposal_id=own[i].id, box=own[i].box,
                               wins=int(wins[i])) for i in order)
    return ScoreTable(image_id=rec.id, entries=entries)


def select_salient_count(descending_wins: np.ndarray) -> int:
    """Number of salient objects: position of the largest consecutive drop.

    Expects win counts already sorted in descending order.  Ties go to the
    earliest position; a single proposal yields 1.
    """
    wins = np.asarray(descending_wins, dtype=np.float64)
    if wins.ndim != 1 or wins.size == 0:
        raise ValidationError(f"select_salient_count: need a non-empty 1-d "
                              f"array, got shape {wins.shape}")
    if np.any(np.diff(wins) > 0):
        raise ValidationError("select_salient_count: win counts must be "
                              "sorted in descending order")
    if wins.size == 1:
        return 1
    drops = wins[:-1] - wins[1:]
    return int(np.argmax(drops)) + 1


def coarse_mask(width: int, height: int, boxes: list[BBox]) -> np.ndarray:
    """Binary union of boxes as a float64 (height, width) mask."""
    if width < 1 or height < 1:
        raise ValidationError(f"coarse_mask: bad image size {width}x{height}")
    mask = np.zeros((height, width), dtype=np.float64)
    for box in boxes:
        if not box.fits(width, height):
            raise ValidationError(f"coarse_mask: box {box.as_tuple()} exceeds "
                                  f"image bounds {width}x{height}")
        mask[box.slices()] = 1.0
    return mask


def localize(model: RankerModel, dataset: Dataset, rec: ImageRecord,
             retrieved_ids: list[str],
             filter_cfg: FilterConfig = FilterConfig()):
    """Full localization for one image: (table, q, selected entries, mask)."""
    table = score_proposals(model, dataset, rec, retrieved_ids, filter_cfg)
    if not table.entries:
        return table, 0, [], np.zeros((rec.height, rec.width), dtype=np.float64)
    q = select_salient_count(table.descending())
    selected = table.top(q)
    mask = coarse_mask(rec.width, rec.height, [e.box for e in selected])
    return table, q, selected, mask
