"""Pseudo-label and training-pair enumeration tests."""

import numpy as np
import pytest

from semsal.dataio import BBox, FeatureStore, load_manifest
from semsal.errors import FormatError, ValidationError
from semsal.pairs import (
    LabelContext,
    PairConfig,
    PairRecord,
    TrainingSet,
    enumerate_all_pairs,
    enumerate_pairs,
    gt_coverage_label,
    model_saliency_score,
    multiscale_feature,
    pair_label,
    read_pair_file,
    write_pair_file,
)

from conftest import build_dataset, proposal


def _mask(h, w, box=None):
    m = np.zeros((h, w), dtype=bool)
    if box is not None:
        m[box.slices()] = True
    return m


class TestCoverageLabel:
    def test_full_coverage(self):
        box = BBox(2, 2, 4, 4)
        assert gt_coverage_label(box, _mask(10, 10, box)) == 1

    def test_zero_coverage(self):
        assert gt_coverage_label(BBox(0, 0, 4, 4), _mask(10, 10)) == -1

    def test_exactly_at_threshold_is_negative(self):
        # 70 of 100 box pixels: the threshold is strict
        box = BBox(0, 0, 10, 10)
        gt = np.zeros((12, 12), dtype=bool)
        gt.ravel()[:0] = False
        gt[:7, :10] = True
        assert gt[box.slices()].sum() == 70
        assert gt_coverage_label(box, gt) == -1

    def test_just_above_threshold_is_positive(self):
        box = BBox(0, 0, 10, 10)
        gt = np.zeros((12, 12), dtype=bool)
        gt[:7, :10] = True
        gt[7, 0] = True  # 71 pixels
        assert gt_coverage_label(box, gt) == 1

    def test_custom_threshold(self):
        box = BBox(0, 0, 2, 2)
        gt = np.zeros((4, 4), dtype=bool)
        gt[0, :2] = True  # 50% of the box
        assert gt_coverage_label(box, gt, threshold=0.4) == 1
        assert gt_coverage_label(box, gt, threshold=0.5) == -1


class TestModelScore:
    def test_all_uniform_ones(self):
        box = BBox(1, 1, 3, 3)
        maps = [np.ones((8, 8)) for _ in range(5)]
        np.testing.assert_allclose(model_saliency_score(box, maps), 5.0)

    def test_single_half_map(self):
        box = BBox(0, 0, 4, 4)
        maps = [np.full((8, 8), 0.5), np.zeros((8, 8)), np.zeros((8, 8)),
                np.zeros((8, 8)), np.zeros((8, 8))]
        np.testing.assert_allclose(model_saliency_score(box, maps), 0.5)

    def test_sums_over_maps(self, rng):
        box = BBox(2, 1, 5, 4)
        maps = [rng.uniform(size=(10, 10)) for _ in range(3)]
        expect = sum(m[box.slices()].sum() for m in maps) / box.area
        np.testing.assert_allclose(model_saliency_score(box, maps), expect)

    def test_monotone_in_map_values(self, rng):
        box = BBox(0, 0, 6, 6)
        base = [rng.uniform(0.0, 0.5, size=(8, 8)) for _ in range(2)]
        brighter = [m + 0.1 for m in base]
        assert (model_saliency_score(box, brighter)
                > model_saliency_score(box, base))


class TestPairLabel:
    def _ctx(self, covered=None, score=None):
        """Build a LabelContext hitting the given coverage/model score."""
        box = BBox(0, 0, 4, 4)
        gt = None
        if covered is not None:
            gt = _mask(8, 8, box if covered else None)
        maps = None
        if score is not None:
            maps = [np.full((8, 8), score)]
        return LabelContext(box=box, gt_mask=gt, candidate_maps=maps,
                            image_id="x")

    def test_gt_decides_when_coverage_differs(self):
        win = self._ctx(covered=True, score=0.1)
        lose = self._ctx(covered=False, score=0.9)
        assert pair_label(win, lose) == (1, True)
        assert pair_label(lose, win) == (-1, True)

    def test_equal_coverage_falls_back_to_model(self):
        a = self._ctx(covered=True, score=0.9)
        b = self._ctx(covered=True, score=0.1)
        assert pair_label(a, b) == (1, False)
        assert pair_label(b, a) == (-1, False)

    def test_missing_gt_on_one_side_uses_model(self):
        a = self._ctx(covered=True, score=0.2)
        b = self._ctx(covered=None, score=0.8)
        assert pair_label(a, b) == (-1, False)

    def test_model_tie_labels_second_side(self):
        a = self._ctx(score=0.5)
        b = self._ctx(score=0.5)
        assert pair_label(a, b) == (-1, False)
        assert pair_label(b, a) == (-1, False)

    def test_antisymmetric_when_scores_differ(self, rng):
        for _ in range(20):
            s1, s2 = rng.uniform(size=2)
            if s1 == s2:
                continue
            a, b = self._ctx(score=float(s1)), self._ctx(score=float(s2))
            fwd, gt_fwd = pair_label(a, b)
            rev, gt_rev = pair_label(b, a)
            assert fwd == -rev and not gt_fwd and not gt_rev

    def test_epsilon_drops_close_pairs(self):
        cfg = PairConfig(model_score_epsilon=0.2)
        a, b = self._ctx(score=0.50), self._ctx(score=0.55)
        assert pair_label(a, b, cfg) is None
        c = self._ctx(score=0.9)
        assert pair_label(c, a, cfg) == (1, False)

    def test_epsilon_never_touches_gt_pairs(self):
        cfg = PairConfig(model_score_epsilon=10.0)
        win = self._ctx(covered=True, score=0.5)
        lose = self._ctx(covered=False, score=0.5)
        assert pair_label(win, lose, cfg) == (1, True)

    def test_no_data_errors(self):
        bare = LabelContext(box=BBox(0, 0, 2, 2), gt_mask=None,
                            candidate_maps=None, image_id="broken")
        with pytest.raises(ValidationError, match="broken"):
            pair_label(bare, bare)

    def test_config_validation(self):
        with pytest.raises(ValidationError):
            PairConfig(model_score_epsilon=-0.1)
        with pytest.raises(ValidationError):
            PairConfig(coverage_threshold=1.0)


class TestMultiscaleFeature:
    def test_concatenation_order(self):
        store = FeatureStore(np.arange(12, dtype=np.float32).reshape(4, 3))
        from semsal.dataio import ObjectProposal

        p = ObjectProposal(id="p", box=BBox(0, 0, 2, 2), confidence=0.5,
                           feature_ref=1, context_feature_ref=3)
        np.testing.assert_array_equal(multiscale_feature(p, store),
                                      [3, 4, 5, 9, 10, 11])

    def test_same_ref_duplicates(self):
        store = FeatureStore(np.arange(6, dtype=np.float32).reshape(2, 3))
        from semsal.dataio import ObjectProposal

        p = ObjectProposal(id="p", box=BBox(0, 0, 2, 2), confidence=0.5,
                           feature_ref=0, context_feature_ref=0)
        np.testing.assert_array_equal(multiscale_feature(p, store),
                                      [0, 1, 2, 0, 1, 2])


def _two_image_dataset(tmp_path, rng, n_a=3, n_b=2):
    """Image 'a' (with GT) and image 'b' (maps only), disjoint boxes."""
    dim = 6
    n_vec = 2 * (n_a + n_b)
    vectors = rng.normal(size=(n_vec, dim)).astype(np.float32)
    boxes_a = [(0, 0, 4, 4), (8, 0, 4, 4), (0, 8, 4, 4), (8, 8, 4, 4)][:n_a]
    boxes_b = [(0, 0, 4, 4), (8, 8, 4, 4)][:n_b]
    gt = np.zeros((16, 16))
    gt[0:4, 0:4] = 1.0  # covers proposal a0 fully
    map_a = np.zeros((16, 16))
    map_a[0:4, 0:4] = 1.0
    map_a[0:4, 8:12] = 0.5
    map_b = np.zeros((16, 16))
    map_b[0:4, 0:4] = 0.75
    images = [
        {"id": "a", "width": 16, "height": 16,
         "proposals": [proposal(f"a{i}", boxes_a[i], confidence=0.9,
                                feature=2 * i, context=2 * i + 1)
                       for i in range(n_a)],
         "gt": gt, "maps": [map_a]},
        {"id": "b", "width": 16, "height": 16,
         "proposals": [proposal(f"b{i}", boxes_b[i], confidence=0.9,
                                feature=2 * (n_a + i),
                                context=2 * (n_a + i) + 1)
                       for i in range(n_b)],
         "maps": [map_b]},
    ]
    return load_manifest(build_dataset(tmp_path, images, vectors))


class TestEnumeratePairs:
    def test_intra_image_counts(self, tmp_path, rng):
        ds = _two_image_dataset(tmp_path, rng, n_a=3, n_b=2)
        got = enumerate_pairs(ds, ds.get("a"), [])
        assert len(got) == 3  # C(3, 2)
        assert all(not r.cross_image for r in got)

    def test_single_proposal_no_intra(self, tmp_path, rng):
        ds = _two_image_dataset(tmp_path, rng, n_a=1, n_b=2)
        assert enumerate_pairs(ds, ds.get("a"), []) == []

    def test_cross_image_counts(self, tmp_path, rng):
        ds = _two_image_dataset(tmp_path, rng, n_a=3, n_b=2)
        got = enumerate_pairs(ds, ds.get("a"), ["b"])
        assert len(got) == 3 + 3 * 2
        assert sum(r.cross_image for r in got) == 6

    def test_own_side_comes_first_in_cross_pairs(self, tmp_path, rng):
        ds = _two_image_dataset(tmp_path, rng, n_a=2, n_b=2)
        own_refs = {p.feature_ref for p in ds.get("a").proposals}
        for r in enumerate_pairs(ds, ds.get("a"), ["b"]):
            if r.cross_image:
                assert r.f1_ref in own_refs
                assert r.f2_ref not in own_refs

    def test_no_retrieved_cross_retrieved(self, tmp_path, rng):
        # pairs anchored at 'a' never combine two retrieved-image proposals
        ds = _two_image_dataset(tmp_path, rng, n_a=1, n_b=2)
        got = enumerate_pairs(ds, ds.get("a"), ["b"])
        b_refs = {p.feature_ref for p in ds.get("b").proposals}
        assert len(got) == 2
        for r in got:
            assert not (r.f1_ref in b_refs and r.f2_ref in b_refs)

    def test_gt_beats_model_in_labels(self, tmp_path, rng):
        # a0 is GT-covered, a1 is not: the coverage route decides (+1) even
        # though a1's model score (0.5) is below a0's (1.0) anyway
        ds = _two_image_dataset(tmp_path, rng, n_a=2, n_b=2)
        (rec,) = [r for r in enumerate_pairs(ds, ds.get("a"), [])
                  if not r.cross_image]
        assert rec.label == 1
        assert not rec.model_labeled

    def test_cross_pairs_use_model_when_one_side_lacks_gt(self, tmp_path, rng):
        ds = _two_image_dataset(tmp_path, rng, n_a=1, n_b=1)
        got = enumerate_pairs(ds, ds.get("a"), ["b"])
        (rec,) = got
        # a0 score 1.0 vs b0 score 0.75 -> first side wins via model route
        assert rec.label == 1
        assert rec.model_labeled and rec.cross_image

    def test_self_retrieval_rejected(self, tmp_path, rng):
        ds = _two_image_dataset(tmp_path, rng)
        with pytest.raises(ValidationError, match="itself"):
            enumerate_pairs(ds, ds.get("a"), ["a"])

    def test_enumerate_all_matches_per_image(self, tmp_path, rng):
        ds = _two_image_dataset(tmp_path, rng, n_a=3, n_b=2)
        retrieval = {"a": ["b"], "b": ["a"]}
        combined = enumerate_all_pairs(ds, retrieval)
        expect = (enumerate_pairs(ds, ds.get("a"), ["b"])
                  + enumerate_pairs(ds, ds.get("b"), ["a"]))
        assert combined == expect


class TestTrainingSet:
    def test_from_records_features(self, rng):
        store = FeatureStore(rng.normal(size=(6, 3)).astype(np.float32))
        records = [PairRecord(0, 1, 2, 3, 1, False, False),
                   PairRecord(4, 4, 5, 0, -1, True, True)]
        ts = TrainingSet.from_records(records, store)
        assert len(ts) == 2 and ts.feature_dim == 6
        f1, f2 = ts.features_for(np.array([0, 1]))
        vecs = store.vectors
        np.testing.assert_array_equal(f1[0], np.concatenate([vecs[0], vecs[1]]))
        np.testing.assert_array_equal(f2[0], np.concatenate([vecs[2], vecs[3]]))
        np.testing.assert_array_equal(f1[1], np.concatenate([vecs[4], vecs[4]]))
        np.testing.assert_array_equal(f2[1], np.concatenate([vecs[5], vecs[0]]))
        np.testing.assert_array_equal(ts.labels, [1.0, -1.0])

    def test_from_arrays_round_trip(self, rng):
        f1 = rng.normal(size=(5, 8)).astype(np.float32)
        f2 = rng.normal(size=(5, 8)).astype(np.float32)
        labels = np.array([1, -1, 1, 1, -1])
        ts = TrainingSet.from_arrays(f1, f2, labels)
        assert ts.feature_dim == 8
        got1, got2 = ts.features_for(np.arange(5))
        np.testing.assert_array_equal(got1, f1)
        np.testing.assert_array_equal(got2, f2)

    def test_from_arrays_odd_dim_rejected(self, rng):
        f = rng.normal(size=(2, 3)).astype(np.float32)
        with pytest.raises(ValidationError, match="even"):
            TrainingSet.from_arrays(f, f, np.array([1, -1]))

    def test_bad_labels_rejected(self, rng):
        store = FeatureStore(rng.normal(size=(2, 3)).astype(np.float32))
        with pytest.raises(ValidationError, match="labels"):
            TrainingSet(np.zeros((1, 4)), np.array([0]), store)

    def test_dangling_ref_rejected(self, rng):
        store = FeatureStore(rng.normal(size=(2, 3)).astype(np.float32))
        with pytest.raises(ValidationError, match="dangling"):
            TrainingSet(np.array([[0, 1, 2, 0]]), np.array([1]), store)

    def test_summary_counts(self, rng):
        store = FeatureStore(rng.normal(size=(2, 3)).astype(np.float32))
        records = [PairRecord(0, 0, 1, 1, 1, False, False),
                   PairRecord(0, 0, 1, 1, -1, True, True),
                   PairRecord(1, 1, 0, 0, -1, True, False)]
        ts = TrainingSet.from_records(records, store)
        assert ts.summary() == {"pairs": 3, "within_image": 1,
                                "cross_image": 2, "gt_labeled": 2,
                                "model_labeled": 1, "label_plus": 1,
                                "label_minus": 2}


class TestPairFile:
    def test_round_trip(self, tmp_path):
        records = [PairRecord(0, 1, 2, 3, 1, False, True),
                   PairRecord(7, 7, 0, 5, -1, True, False)]
        path = tmp_path / "pairs.srp"
        write_pair_file(records, path)
        assert read_pair_file(path) == records

    def test_rewrite_is_byte_identical(self, tmp_path):
        records = [PairRecord(3, 4, 5, 6, -1, True, True)]
        p1, p2 = tmp_path / "a.srp", tmp_path / "b.srp"
        write_pair_file(records, p1)
        write_pair_file(read_pair_file(p1), p2)
        assert p1.read_bytes() == p2.read_bytes()

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "pairs.srp"
        path.write_bytes(b"XXXX" + b"\x00" * 4)
        with pytest.raises(FormatError, match="magic"):
            read_pair_file(path)

    def test_truncated_payload(self, tmp_path):
        path = tmp_path / "pairs.srp"
        write_pair_file([PairRecord(0, 0, 0, 0, 1, False, False)], path)
        path.write_bytes(path.read_bytes()[:-3])
        with pytest.raises(FormatError, match="records need"):
            read_pair_file(path)

    def test_bad_label_byte(self, tmp_path):
        path = tmp_path / "pairs.srp"
        write_pair_file([PairRecord(0, 0, 0, 0, 1, False, False)], path)
        data = bytearray(path.read_bytes())
        data[8 + 16] = 3  # label byte of record 0
        path.write_bytes(bytes(data))
        with pytest.raises(FormatError, match="label"):
            read_pair_file(path)
