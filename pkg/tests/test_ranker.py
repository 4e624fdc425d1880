"""Ranker tests: forward pass, hinge loss, gradients, training, estimator."""

import numpy as np
import pytest
from sklearn.base import clone

from semsal.errors import TrainingError, ValidationError
from semsal.pairs import TrainingSet
from semsal.ranker import (
    RankerModel,
    SaliencyRanker,
    TrainConfig,
    batch_gradient,
    forward,
    hinge_loss,
    init_model,
    pair_gradient,
    train_ranker,
)
from semsal.synthetic import make_ranking_pairs


def _hand_model():
    """2 -> 2 -> 1 network with hand-picked weights."""
    return RankerModel(
        dims=(2, 2, 1),
        weights=[np.array([[1.0, 0.0], [0.0, 1.0]], dtype=np.float32),
                 np.array([[1.0, -1.0]], dtype=np.float32)],
        biases=[np.zeros(2, dtype=np.float32),
                np.array([0.5], dtype=np.float32)])


class TestForward:
    def test_hand_computed(self):
        model = _hand_model()
        # relu([3, -2]) = [3, 0]; 3*1 + 0*(-1) + 0.5 = 3.5
        np.testing.assert_allclose(forward(model, np.array([3.0, -2.0])), 3.5)
        # both units clipped -> only the bias remains
        np.testing.assert_allclose(forward(model, np.array([-1.0, -2.0])), 0.5)

    def test_batch_matches_single(self, rng):
        model = init_model((6, 4, 3, 1), seed=3)
        x = rng.normal(size=(10, 6)).astype(np.float32)
        batch = forward(model, x)
        assert batch.shape == (10,)
        for i in range(10):
            np.testing.assert_allclose(forward(model, x[i]), batch[i],
                                       rtol=1e-5, atol=1e-6)

    def test_zero_weights_score_zero(self, rng):
        model = init_model((5, 3, 1), seed=0, init_scale=1.0)
        for w in model.weights:
            w[:] = 0.0
        x = rng.normal(size=(4, 5))
        np.testing.assert_array_equal(forward(model, x), np.zeros(4))

    def test_dim_mismatch(self):
        model = init_model((4, 2, 1), seed=0)
        with pytest.raises(ValidationError, match="expects"):
            forward(model, np.zeros(5))

    def test_init_validation(self):
        with pytest.raises(ValidationError):
            init_model((4,), seed=0)
        with pytest.raises(ValidationError):
            init_model((4, 3, 2), seed=0)  # must end in a single score

    def test_init_deterministic(self):
        a = init_model((7, 3, 1), seed=11)
        b = init_model((7, 3, 1), seed=11)
        c = init_model((7, 3, 1), seed=12)
        for wa, wb in zip(a.weights, b.weights):
            np.testing.assert_array_equal(wa, wb)
        assert any((wa != wc).any() for wa, wc in zip(a.weights, c.weights))


class TestHingeLoss:
    def test_slack_values(self):
        # inverted by more than the margin
        np.testing.assert_allclose(hinge_loss(0.0, 15.0, 1, margin=10), 5.0)
        # correctly ordered: no penalty no matter the gap
        np.testing.assert_allclose(hinge_loss(5.0, 0.0, 1, margin=10), 0.0)
        # label -1 wants the second side higher
        np.testing.assert_allclose(hinge_loss(20.0, 0.0, -1, margin=10), 10.0)

    def test_slack_tolerates_small_inversions(self):
        assert hinge_loss(0.0, 9.0, 1, margin=10) == 0.0
        assert hinge_loss(0.0, 11.0, 1, margin=10) == 1.0

    def test_strict_demands_margin(self):
        # correctly ordered but short of the margin
        np.testing.assert_allclose(
            hinge_loss(5.0, 0.0, 1, margin=10, variant="strict"), 5.0)
        np.testing.assert_allclose(
            hinge_loss(15.0, 0.0, 1, margin=10, variant="strict"), 0.0)
        np.testing.assert_allclose(
            hinge_loss(0.0, 0.0, 1, margin=10, variant="strict"), 10.0)

    def test_swap_symmetry(self, rng):
        for variant in ("slack", "strict"):
            s1, s2 = rng.normal(size=(2, 50)) * 10
            labels = rng.choice([-1.0, 1.0], size=50)
            np.testing.assert_allclose(
                hinge_loss(s1, s2, labels, variant=variant),
                hinge_loss(s2, s1, -labels, variant=variant))

    def test_offset_invariance(self, rng):
        s1, s2 = rng.normal(size=(2, 30))
        labels = rng.choice([-1.0, 1.0], size=30)
        for variant in ("slack", "strict"):
            np.testing.assert_allclose(
                hinge_loss(s1 + 7.3, s2 + 7.3, labels, variant=variant),
                hinge_loss(s1, s2, labels, variant=variant), atol=1e-12)

    def test_array_shapes(self, rng):
        s1, s2 = rng.normal(size=(2, 6))
        out = hinge_loss(s1, s2, np.ones(6))
        assert out.shape == (6,)
        assert isinstance(hinge_loss(1.0, 2.0, 1), float)

    def test_unknown_variant(self):
        with pytest.raises(ValidationError, match="variant"):
            hinge_loss(0.0, 1.0, 1, variant="huber")


def _numeric_gradient(model, f1, f2, labels, margin, variant, h=1e-6):
    """Central-difference gradients of the mean batch hinge loss."""
    def loss_at():
        s1 = forward(model, f1)
        s2 = forward(model, f2)
        return float(np.mean(hinge_loss(s1, s2, labels, margin, variant)))

    grads_w, grads_b = [], []
    for arrs, grads in ((model.weights, grads_w), (model.biases, grads_b)):
        for arr in arrs:
            g = np.zeros_like(arr)
            flat = arr.reshape(-1)
            gflat = g.reshape(-1)
            for k in range(flat.size):
                orig = flat[k]
                flat[k] = orig + h
                hi = loss_at()
                flat[k] = orig - h
                lo = loss_at()
                flat[k] = orig
                gflat[k] = (hi - lo) / (2 * h)
            grads.append(g)
    return grads_w, grads_b


class TestGradients:
    @pytest.mark.parametrize("variant", ["slack", "strict"])
    def test_matches_finite_differences(self, rng, variant):
        model = init_model((8, 4, 1), seed=5, dtype=np.float64)
        f1 = rng.normal(size=(6, 8)) * 3
        f2 = rng.normal(size=(6, 8)) * 3
        labels = rng.choice([-1.0, 1.0], size=6)
        loss, gw, gb = batch_gradient(model, f1, f2, labels, margin=1.0,
                                      variant=variant)
        assert loss > 0  # some pairs must be active for a meaningful check
        nw, nb = _numeric_gradient(model, f1, f2, labels, 1.0, variant)
        scale = max(float(np.abs(g).max()) for g in nw + nb)
        for analytic, numeric in zip(gw + gb, nw + nb):
            np.testing.assert_allclose(analytic, numeric, rtol=1e-4,
                                       atol=1e-4 * scale)

    def test_inactive_pairs_zero_gradient(self, rng):
        # identical sides give s1 == s2, inactive under the slack variant
        model = init_model((5, 3, 1), seed=1, dtype=np.float64)
        f = rng.normal(size=(4, 5))
        loss, gw, gb = batch_gradient(model, f, f, np.ones(4), margin=10.0,
                                      variant="slack")
        assert loss == 0.0
        for g in gw + gb:
            np.testing.assert_array_equal(g, np.zeros_like(g))

    def test_identical_sides_cancel_even_when_active(self, rng):
        # the strict variant is active at s1 == s2, but the two branches'
        # contributions cancel exactly because the inputs are shared
        model = init_model((5, 3, 1), seed=1, dtype=np.float64)
        f = rng.normal(size=(4, 5))
        loss, gw, gb = batch_gradient(model, f, f, np.ones(4), margin=10.0,
                                      variant="strict")
        np.testing.assert_allclose(loss, 10.0)
        for g in gw + gb:
            np.testing.assert_allclose(g, np.zeros_like(g), atol=1e-12)

    def test_batch_is_mean_of_pairs(self, rng):
        model = init_model((6, 4, 1), seed=2, dtype=np.float64)
        f1 = rng.normal(size=(5, 6)) * 2
        f2 = rng.normal(size=(5, 6)) * 2
        labels = rng.choice([-1.0, 1.0], size=5)
        loss, gw, gb = batch_gradient(model, f1, f2, labels, margin=1.0,
                                      variant="strict")
        pair_losses, pair_gw, pair_gb = [], [], []
        for i in range(5):
            pl, pw, pb = pair_gradient(model, f1[i], f2[i], labels[i],
                                       margin=1.0, variant="strict")
            pair_losses.append(pl)
            pair_gw.append(pw)
            pair_gb.append(pb)
        np.testing.assert_allclose(loss, np.mean(pair_losses))
        for layer in range(len(gw)):
            np.testing.assert_allclose(
                gw[layer], np.mean([p[layer] for p in pair_gw], axis=0),
                atol=1e-12)
            np.testing.assert_allclose(
                gb[layer], np.mean([p[layer] for p in pair_gb], axis=0),
                atol=1e-12)

    def test_descent_on_fixed_batch(self, rng):
        model = init_model((10, 6, 1), seed=7, dtype=np.float64)
        f1 = rng.normal(size=(16, 10))
        f2 = rng.normal(size=(16, 10))
        labels = rng.choice([-1.0, 1.0], size=16)
        first, *_ = batch_gradient(model, f1, f2, labels, margin=5.0,
                                   variant="strict")
        for _ in range(60):
            loss, gw, gb = batch_gradient(model, f1, f2, labels, margin=5.0,
                                          variant="strict")
            for i in range(len(model.weights)):
                model.weights[i] -= 0.05 * gw[i]
                model.biases[i] -= 0.05 * gb[i]
        last, *_ = batch_gradient(model, f1, f2, labels, margin=5.0,
                                  variant="strict")
        assert last < first


def _toy_training_set(n=64, dim=8, seed=0):
    f1, f2, labels = make_ranking_pairs(n, dim=dim, gap=5.0, spread=10.0,
                                        seed=seed)
    return TrainingSet.from_arrays(f1, f2, labels)


class TestTrainRanker:
    def test_deterministic(self):
        pairs = _toy_training_set()
        cfg = TrainConfig(hidden_dims=(6,), epochs=4, seed=9,
                          hinge_variant="strict", batch_size=16)
        a = train_ranker(pairs, cfg).model
        b = train_ranker(_toy_training_set(), cfg).model
        for wa, wb in zip(a.weights + a.biases, b.weights + b.biases):
            np.testing.assert_array_equal(wa, wb)

    def test_zero_epochs_returns_init(self):
        pairs = _toy_training_set()
        cfg = TrainConfig(hidden_dims=(6,), epochs=0, seed=4)
        result = train_ranker(pairs, cfg)
        init = init_model((pairs.feature_dim, 6, 1), seed=4)
        assert result.model.epoch == 0
        assert result.history == []
        for got, want in zip(result.model.weights, init.weights):
            np.testing.assert_array_equal(got, want)

    def test_loss_improves_on_separable_data(self):
        pairs = _toy_training_set(n=128)
        cfg = TrainConfig(hidden_dims=(8,), epochs=12, seed=0,
                          hinge_variant="strict", batch_size=32,
                          learning_rate=5e-3)
        result = train_ranker(pairs, cfg)
        assert len(result.history) == 12
        assert result.history[-1].train_loss < result.history[0].train_loss
        assert result.model.loss <= result.history[0].val_loss

    def test_best_snapshot_metadata(self):
        pairs = _toy_training_set()
        cfg = TrainConfig(hidden_dims=(6,), epochs=5, seed=1,
                          hinge_variant="strict", batch_size=16)
        result = train_ranker(pairs, cfg)
        assert 0 <= result.model.epoch <= 5
        val_losses = [s.val_loss for s in result.history]
        assert result.model.loss <= min(val_losses) + 1e-12

    def test_stop_loss_breaks_early(self):
        pairs = _toy_training_set()
        cfg = TrainConfig(hidden_dims=(6,), epochs=50, seed=2,
                          hinge_variant="strict", stop_loss=1e9)
        result = train_ranker(pairs, cfg)
        assert len(result.history) == 1

    def test_exploding_update_raises(self):
        pairs = _toy_training_set(n=32)
        cfg = TrainConfig(hidden_dims=(4,), epochs=5, seed=0,
                          hinge_variant="strict", learning_rate=1e30,
                          momentum=0.0, batch_size=8)
        with np.errstate(over="ignore", invalid="ignore"):
            with pytest.raises(TrainingError, match="non-finite"):
                train_ranker(pairs, cfg)

    def test_empty_pairs_rejected(self):
        store_pairs = TrainingSet.from_arrays(np.zeros((0, 4), np.float32),
                                              np.zeros((0, 4), np.float32),
                                              np.zeros(0))
        with pytest.raises(ValidationError, match="empty"):
            train_ranker(store_pairs)

    def test_config_validation(self):
        with pytest.raises(ValidationError):
            TrainConfig(momentum=1.0)
        with pytest.raises(ValidationError):
            TrainConfig(epochs=-1)
        with pytest.raises(ValidationError):
            TrainConfig(hinge_variant="soft")
        with pytest.raises(ValidationError):
            TrainConfig(batch_size=0)


class TestSaliencyRanker:
    def _data(self, n=96, dim=8, seed=3):
        f1, f2, labels = make_ranking_pairs(n, dim=dim, gap=6.0, spread=12.0,
                                            seed=seed)
        X = np.stack([f1, f2], axis=1)  # (n, 2, d)
        return X, labels

    def _estimator(self, **kw):
        base = dict(hidden_dims=(8,), epochs=15, hinge_variant="strict",
                    batch_size=32, learning_rate=5e-3, random_state=0)
        base.update(kw)
        return SaliencyRanker(**base)

    def test_fit_predict_score(self):
        X, y = self._data()
        est = self._estimator().fit(X, y)
        assert est.n_features_in_ == 8
        preds = est.predict(X)
        assert set(np.unique(preds)) <= {-1, 1}
        assert est.score(X, y) >= 0.8

    def test_flat_layout_equivalent(self):
        X, y = self._data()
        flat = X.reshape(len(X), -1)
        a = self._estimator().fit(X, y)
        b = self._estimator().fit(flat, y)
        np.testing.assert_array_equal(a.predict(X), b.predict(flat))
        for wa, wb in zip(a.model_.weights, b.model_.weights):
            np.testing.assert_array_equal(wa, wb)

    def test_decision_function_single_and_batch(self):
        X, y = self._data()
        est = self._estimator().fit(X, y)
        feats = X[:5, 0, :]
        batch = est.decision_function(feats)
        single = est.decision_function(feats[0])
        np.testing.assert_allclose(single[0], batch[0], rtol=1e-6)

    def test_clone_and_get_params(self):
        est = self._estimator(margin=4.0)
        params = est.get_params()
        assert params["margin"] == 4.0
        assert params["hinge_variant"] == "strict"
        twin = clone(est)
        assert twin.get_params() == params

    def test_unfitted_errors(self):
        with pytest.raises(ValidationError, match="not fitted"):
            self._estimator().predict(np.zeros((1, 2, 4)))

    def test_bad_labels(self):
        X, _ = self._data(n=8)
        with pytest.raises(ValidationError, match="label"):
            self._estimator().fit(X, np.zeros(8))

    def test_save_load_round_trip(self, tmp_path):
        X, y = self._data()
        est = self._estimator().fit(X, y)
        path = tmp_path / "ranker.srm"
        est.save(path)
        loaded = SaliencyRanker.load(path)
        feats = X[:, 0, :]
        np.testing.assert_allclose(loaded.decision_function(feats),
                                   est.decision_function(feats), rtol=1e-6)
        assert loaded.model_.dims == est.model_.dims
