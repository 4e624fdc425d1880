"""Training-pair generation with pseudo ground-truth labels.

A proposal's label context combines three things: its box, the image's
ground-truth mask when one exists, and the stack of candidate saliency maps
from off-the-shelf detectors.  From these, two scores drive pair labeling:

* the coverage label: +1 iff ground-truth foreground fills more than 70%
  of the box, else -1;
* the model score: the sum over the box of all candidate maps, divided by
  the box area (so it lies in [0, n_maps]).

A pair's label prefers ground truth: when both sides have masks and their
coverage labels differ, the covered side wins.  Otherwise the model scores
decide, with exact ties labeled -1 (second side wins).  Pairs are drawn both
within an image and against proposals of retrieved pool images; retrieved
images are never paired with each other.

Pair files use the ``SRP1`` format (little-endian): magic | u32 count | per
pair u32 feature refs (f1, ctx1, f2, ctx2) | i8 label | u8 flags (bit 0 =
cross-image, bit 1 = model-score label).
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from itertools import combinations
from pathlib import Path

import numpy as np

from .dataio import BBox, Dataset, FeatureStore, ImageRecord, ObjectProposal
from .errors import FormatError, ValidationError
from .proposals import FilterConfig, filter_proposals

PAIR_MAGIC = b"SRP1"
COVERAGE_THRESHOLD = 0.7


@dataclass(frozen=True)
class PairConfig:
    """Pair-generation settings."""

    model_score_epsilon: float = 0.0  # drop model-labeled pairs closer than this
    coverage_threshold: float = COVERAGE_THRESHOLD

    def __post_init__(self):
        if self.model_score_epsilon < 0:
            raise ValidationError(f"model_score_epsilon must be >= 0, got "
                                  f"{self.model_score_epsilon}")
        if not (0.0 < self.coverage_threshold < 1.0):
            raise ValidationError(f"coverage_threshold must be in (0, 1), got "
                                  f"{self.coverage_threshold}")


@dataclass(frozen=True)
class LabelContext:
    """Everything needed to label one proposal: box, mask, candidate maps."""

    box: BBox
    gt_mask: np.ndarray | None
    candidate_maps: list[np.ndarray] | None
    image_id: str = "?"


@dataclass(frozen=True)
class PairRecord:
    """One training pair: feature references, label, label-origin flags."""

    f1_ref: int
    ctx1_ref: int
    f2_ref: int
    ctx2_ref: int
    label: int
    cross_image: bool
    model_labeled: bool


def multiscale_feature(proposal: ObjectProposal, store: FeatureStore) -> np.ndarray:
    """Concatenate a proposal's own and enlarged-context feature vectors."""
    return np.concatenate([store.get(proposal.feature_ref),
                           store.get(proposal.context_feature_ref)])


def gt_coverage_label(box: BBox, gt_mask: np.ndarray,
                      threshold: float = COVERAGE_THRESHOLD) -> int:
    """+1 iff ground-truth foreground covers strictly more than ``threshold``."""
    foreground = float(gt_mask[box.slices()].sum())
    return 1 if foreground / box.area > threshold else -1


def model_saliency_score(box: BBox, candidate_maps: list[np.ndarray]) -> float:
    """Mean over the box of the summed candidate maps; range [0, n_maps]."""
    total = 0.0
    for m in candidate_maps:
        total += float(m[box.slices()].sum())
    return total / box.area


@dataclass(frozen=True)
class ProposalScores:
    """Precomputed label ingredients for one proposal."""

    coverage: int | None      # +1/-1 from the ground-truth mask, if any
    model_score: float | None # box-mean of summed candidate maps, if any
    image_id: str = "?"


def _label_from_scores(a: ProposalScores, b: ProposalScores,
                       cfg: PairConfig) -> tuple[int, bool] | None:
    if a.coverage is not None and b.coverage is not None \
            and a.coverage != b.coverage:
        return (1 if a.coverage > b.coverage else -1), True
    for side in (a, b):
        if side.model_score is None:
            raise ValidationError(f"image '{side.image_id}': no ground truth "
                                  f"and no candidate maps; cannot label "
                                  f"proposal pairs")
    if cfg.model_score_epsilon > 0 \
            and abs(a.model_score - b.model_score) < cfg.model_score_epsilon:
        return None
    return (1 if a.model_score > b.model_score else -1), False


def _context_scores(ctx: LabelContext, cfg: PairConfig) -> ProposalScores:
    coverage = None
    if ctx.gt_mask is not None:
        coverage = gt_coverage_label(ctx.box, ctx.gt_mask,
                                     cfg.coverage_threshold)
    score = None
    if ctx.candidate_maps:
        score = model_saliency_score(ctx.box, ctx.candidate_maps)
    return ProposalScores(coverage=coverage, model_score=score,
                          image_id=ctx.image_id)


def pair_label(ctx1: LabelContext, ctx2: LabelContext,
               cfg: PairConfig = PairConfig()) -> tuple[int, bool] | None:
    """Label a proposal pair: (label, gt_based), or None when filtered out.

    Ground truth decides when both sides have masks and their coverage labels
    differ.  Every other case falls back to comparing model scores, where the
    first side wins only on a strictly larger score (ties label the second
    side the winner) and pairs with ``|score1 - score2| <
    model_score_epsilon`` are dropped.
    """
    return _label_from_scores(_context_scores(ctx1, cfg),
                              _context_scores(ctx2, cfg), cfg)


def _proposal_scores(dataset: Dataset, rec: ImageRecord,
                     proposals: list[ObjectProposal],
                     cfg: PairConfig) -> list[ProposalScores]:
    gt = dataset.gt_mask(rec)
    maps = dataset.candidate_maps(rec) or None
    return [_context_scores(LabelContext(box=p.box, gt_mask=gt,
                                         candidate_maps=maps,
                                         image_id=rec.id), cfg)
            for p in proposals]


def _scored_proposals(dataset: Dataset, rec: ImageRecord, pair_cfg: PairConfig,
                      filter_cfg: FilterConfig, cache: dict):
    if rec.id not in cache:
        props = sorted(filter_proposals(rec.proposals, filter_cfg),
                       key=lambda p: p.id)
        cache[rec.id] = (props, _proposal_scores(dataset, rec, props, pair_cfg))
    return cache[rec.id]


def enumerate_pairs(dataset: Dataset, rec: ImageRecord,
                    retrieved_ids: list[str],
                    pair_cfg: PairConfig = PairConfig(),
                    filter_cfg: FilterConfig = FilterConfig(),
                    _cache: dict | None = None) -> list[PairRecord]:
    """All training pairs anchored at one image.

    Within-image pairs are the unordered proposal combinations in id order;
    cross-image pairs put each of the image's proposals against every proposal
    of every retrieved image, in the given retrieval order.  Retrieved images
    are never paired with each other.
    """
    cache = {} if _cache is None else _cache
    own, own_scores = _scored_proposals(dataset, rec, pair_cfg, filter_cfg,
                                        cache)
    records: list[PairRecord] = []

    def _emit(p1, s1, p2, s2, cross: bool):
        labeled = _label_from_scores(s1, s2, pair_cfg)
        if labeled is None:
            return
        label, gt_based = labeled
        records.append(PairRecord(
            f1_ref=p1.feature_ref, ctx1_ref=p1.context_feature_ref,
            f2_ref=p2.feature_ref, ctx2_ref=p2.context_feature_ref,
            label=label, cross_image=cross, model_labeled=not gt_based))

    for (i1, p1), (i2, p2) in combinations(enumerate(own), 2):
        _emit(p1, own_scores[i1], p2, own_scores[i2], cross=False)

    for other_id in retrieved_ids:
        other = dataset.get(other_id)
        if other.id == rec.id:
            raise ValidationError(f"image '{rec.id}': retrieved list contains "
                                  f"the image itself")
        other_props, other_scores = _scored_proposals(dataset, other, pair_cfg,
                                                      filter_cfg, cache)
        for i1, p1 in enumerate(own):
            for p2, s2 in zip(other_props, other_scores):
                _emit(p1, own_scores[i1], p2, s2, cross=True)
    return records


def enumerate_all_pairs(dataset: Dataset, retrieval: dict[str, list[str]],
                        pair_cfg: PairConfig = PairConfig(),
                        filter_cfg: FilterConfig = FilterConfig()) -> list[PairRecord]:
    """Pairs for every image in manifest order (canonical output order)."""
    records: list[PairRecord] = []
    cache: dict = {}
    for rec in dataset:
        records.extend(enumerate_pairs(dataset, rec, retrieval.get(rec.id, []),
                                       pair_cfg, filter_cfg, _cache=cache))
    return records


# ---------------------------------------------------------------------------
# training-set assembly and pair-file IO


class TrainingSet:
    """Pairs as (n, 4) feature references plus labels, resolved per batch.

    Features are gathered from the store minibatch by minibatch, so the full
    concatenated pair matrix never has to be materialized.
    """

    def __init__(self, refs: np.ndarray, labels: np.ndarray, store: FeatureStore,
                 flags: np.ndarray | None = None):
        refs = np.asarray(refs, dtype=np.uint32)
        labels = np.asarray(labels, dtype=np.int8)
        if refs.ndim != 2 or refs.shape[1] != 4:
            raise ValidationError(f"training set: refs must be (n, 4), got "
                                  f"{refs.shape}")
        if labels.shape != (refs.shape[0],):
            raise ValidationError("training set: labels do not match refs")
        if not np.all(np.abs(labels) == 1):
            raise ValidationError("training set: labels must be +1 or -1")
        if refs.size and int(refs.max()) >= store.count:
            raise ValidationError(f"training set: dangling feature reference "
                                  f"{int(refs.max())} (store holds "
                                  f"{store.count} vectors)")
        self.refs = refs
        self.labels = labels.astype(np.float32)
        self.store = store
        self.flags = (np.zeros(len(labels), dtype=np.uint8)
                      if flags is None else np.asarray(flags, dtype=np.uint8))

    @classmethod
    def from_records(cls, records: list[PairRecord],
                     store: FeatureStore) -> "TrainingSet":
        refs = np.array([(r.f1_ref, r.ctx1_ref, r.f2_ref, r.ctx2_ref)
                         for r in records], dtype=np.uint32).reshape(-1, 4)
        labels = np.array([r.label for r in records], dtype=np.int8)
        flags = np.array([(r.cross_image << 0) | (r.model_labeled << 1)
                          for r in records], dtype=np.uint8)
        return cls(refs, labels, store, flags)

    @classmethod
    def from_arrays(cls, f1: np.ndarray, f2: np.ndarray,
                    labels: np.ndarray) -> "TrainingSet":
        f1 = np.asarray(f1, dtype=np.float32)
        f2 = np.asarray(f2, dtype=np.float32)
        if f1.ndim != 2 or f1.shape != f2.shape:
            raise ValidationError(f"training set: feature arrays must share a "
                                  f"(n, d) shape, got {f1.shape} and {f2.shape}")
        if f1.shape[1] % 2:
            raise ValidationError("training set: feature dim must be even "
                                  "(own + context halves)")
        half = f1.shape[1] // 2
        stacked = np.concatenate([f1[:, :half], f1[:, half:],
                                  f2[:, :half], f2[:, half:]])
        n = f1.shape[0]
        refs = np.arange(4 * n, dtype=np.uint32).reshape(4, n).T
        return cls(refs, np.asarray(labels), FeatureStore(stacked))

    def __len__(self) -> int:
        return len(self.labels)

    @property
    def feature_dim(self) -> int:
        return 2 * self.store.dim

    def features_for(self, idx: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """(f1, f2) matrices for the pair indices ``idx``, each (b, 2*dim)."""
        refs = self.refs[idx]
        f1 = np.concatenate([self.store.gather(refs[:, 0]),
                             self.store.gather(refs[:, 1])], axis=1)
        f2 = np.concatenate([self.store.gather(refs[:, 2]),
                             self.store.gather(refs[:, 3])], axis=1)
        return f1, f2

    def summary(self) -> dict[str, int]:
        cross = self.flags & 1 > 0
        model = self.flags & 2 > 0
        return {
            "pairs": int(len(self.labels)),
            "within_image": int((~cross).sum()),
            "cross_image": int(cross.sum()),
            "gt_labeled": int((~model).sum()),
            "model_labeled": int(model.sum()),
            "label_plus": int((self.labels > 0).sum()),
            "label_minus": int((self.labels < 0).sum()),
        }


def write_pair_file(records: list[PairRecord], path) -> None:
    out = [PAIR_MAGIC, struct.pack("<I", len(records))]
    for r in records:
        flags = (r.cross_image << 0) | (r.model_labeled << 1)
        out.append(struct.pack("<IIIIbB", r.f1_ref, r.ctx1_ref,
                               r.f2_ref, r.ctx2_ref, r.label, flags))
    Path(path).write_bytes(b"".join(out))


def read_pair_file(path) -> list[PairRecord]:
    path = Path(path)
    data = path.read_bytes()
    if len(data) < 8:
        raise FormatError(f"pair file '{path}': truncated header")
    if data[:4] != PAIR_MAGIC:
        raise FormatError(f"pair file '{path}': bad magic {data[:4]!r}")
    (count,) = struct.unpack_from("<I", data, 4)
    record_size = struct.calcsize("<IIIIbB")
    expected = count * record_size
    if len(data) - 8 != expected:
        raise FormatError(f"pair file '{path}': {count} records need "
                          f"{expected} bytes, got {len(data) - 8}")
    records = []
    for i in range(count):
        f1, c1, f2, c2, label, flags = struct.unpack_from(
            "<IIIIbB", data, 8 + i * record_size)
        if label not in (-1, 1):
            raise FormatError(f"pair file '{path}': record {i} has label "
                              f"{label}, expected +1/-1")
        records.append(PairRecord(f1_ref=f1, ctx1_ref=c1, f2_ref=f2,
                                  ctx2_ref=c2, label=label,
                                  cross_image=bool(flags & 1),
                                  model_labeled=bool(flags & 2)))
    return records
