"""Pairwise saliency ranker: a small MLP trained with a siamese hinge loss.

Both proposals of a pair go through the same fully-connected ReLU network
(shared weights) ending in a single linear score.  With pair label ``y`` in
{+1, -1} (+1 means the first proposal should rank higher) and margin ``rho``,
two hinge variants are supported:

* ``slack``   -- max{0, y * (s2 - s1) - rho}: tolerates score gaps up to the
  margin and only penalizes inversions larger than it;
* ``strict``  -- max{0, rho - y * (s1 - s2)}: demands that the correctly
  ordered side win by at least the margin.

Both variants share the same gradient wherever the loss is active, so the
optimizer below handles them uniformly.  Training is plain minibatch SGD with
momentum, implemented directly on numpy arrays; given a seed, the run is
fully deterministic and the returned model is the epoch snapshot with the
lowest validation loss.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from sklearn.base import BaseEstimator

from .dataio import RankerCheckpoint
from .errors import TrainingError, ValidationError
from .pairs import TrainingSet
from .validation import check_fraction, check_positive

log = logging.getLogger(__name__)

DEFAULT_HIDDEN_DIMS = (1024, 2048, 2048, 1024, 1024)
HINGE_VARIANTS = ("slack", "strict")


@dataclass
class RankerModel:
    """Fully-connected scorer: weights[i] is (out, in), biases[i] is (out,)."""

    dims: tuple[int, ...]
    weights: list[np.ndarray]
    biases: list[np.ndarray]
    activation: str = "relu"
    seed: int = 0
    epoch: int = 0
    loss: float = 0.0

    @property
    def input_dim(self) -> int:
        return self.dims[0]

    def copy(self) -> "RankerModel":
        return RankerModel(dims=self.dims,
                           weights=[w.copy() for w in self.weights],
                           biases=[b.copy() for b in self.biases],
                           activation=self.activation, seed=self.seed,
                           epoch=self.epoch, loss=self.loss)

    def to_checkpoint(self) -> RankerCheckpoint:
        return RankerCheckpoint(
            dims=self.dims,
            weights=[np.asarray(w, dtype=np.float32) for w in self.weights],
            biases=[np.asarray(b, dtype=np.float32) for b in self.biases],
            activation=self.activation, seed=self.seed, epoch=self.epoch,
            loss=self.loss)

    @classmethod
    def from_checkpoint(cls, ckpt: RankerCheckpoint) -> "RankerModel":
        ckpt.validate()
        return cls(dims=tuple(ckpt.dims),
                   weights=[w.copy() for w in ckpt.weights],
                   biases=[b.copy() for b in ckpt.biases],
                   activation=ckpt.activation, seed=ckpt.seed,
                   epoch=ckpt.epoch, loss=ckpt.loss)


def init_model(dims, seed: int = 0, init_scale: float = 1.0,
               dtype=np.float32) -> RankerModel:
    """Fresh model with fan-in-scaled normal weights and zero biases."""
    dims = tuple(int(d) for d in dims)
    if len(dims) < 2 or any(d < 1 for d in dims):
        raise ValidationError(f"model dims must be >= 2 positive entries, "
                              f"got {dims}")
    if dims[-1] != 1:
        raise ValidationError(f"model must end in a single score output, "
                              f"got dims {dims}")
    rng = np.random.default_rng(seed)
    weights, biases = [], []
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        scale = init_scale / np.sqrt(fan_in)
        weights.append((rng.normal(size=(fan_out, fan_in)) * scale).astype(dtype))
        biases.append(np.zeros(fan_out, dtype=dtype))
    return RankerModel(dims=dims, weights=weights, biases=biases, seed=seed)


def forward(model: RankerModel, features: np.ndarray):
    """Score features: (d,) -> float, (n, d) -> (n,) array."""
    x = np.asarray(features)
    single = x.ndim == 1
    if single:
        x = x[None, :]
    if x.ndim != 2 or x.shape[1] != model.input_dim:
        raise ValidationError(f"features have dim "
                              f"{x.shape[-1] if x.ndim else 0}, model expects "
                              f"{model.input_dim}")
    x = x.astype(model.weights[0].dtype, copy=False)
    last = len(model.weights) - 1
    for i, (w, b) in enumerate(zip(model.weights, model.biases)):
        x = x @ w.T + b
        if i < last:
            np.maximum(x, 0.0, out=x)
    scores = x[:, 0]
    return float(scores[0]) if single else scores


def hinge_loss(s1, s2, label, margin: float = 10.0,
               variant: str = "slack"):
    """Pairwise hinge loss for scores and labels (scalars or arrays)."""
    if variant not in HINGE_VARIANTS:
        raise ValidationError(f"unknown hinge variant '{variant}'")
    s1, s2, label = np.asarray(s1), np.asarray(s2), np.asarray(label)
    if variant == "slack":
        raw = label * (s2 - s1) - margin
    else:
        raw = margin - label * (s1 - s2)
    out = np.maximum(0.0, raw)
    return float(out) if out.ndim == 0 else out


def _forward_cached(model: RankerModel, x: np.ndarray):
    """Forward pass keeping layer inputs for backprop."""
    inputs = []
    last = len(model.weights) - 1
    for i, (w, b) in enumerate(zip(model.weights, model.biases)):
        inputs.append(x)
        x = x @ w.T + b
        if i < last:
            x = np.maximum(x, 0.0)
    return x[:, 0], inputs


def batch_gradient(model: RankerModel, f1: np.ndarray, f2: np.ndarray,
                   labels: np.ndarray, margin: float = 10.0,
                   variant: str = "slack"):
    """Mean hinge loss over a pair batch and its parameter gradients.

    Returns ``(loss, grads_w, grads_b)``.  Both siamese branches share
    parameters, so each pair contributes through both its proposals; this is
    realized by stacking the two feature blocks into one forward pass.
    """
    if variant not in HINGE_VARIANTS:
        raise ValidationError(f"unknown hinge variant '{variant}'")
    f1 = np.asarray(f1, dtype=model.weights[0].dtype)
    f2 = np.asarray(f2, dtype=model.weights[0].dtype)
    labels = np.asarray(labels, dtype=f1.dtype)
    n = f1.shape[0]
    if f2.shape != f1.shape or labels.shape != (n,):
        raise ValidationError("batch_gradient: mismatched batch shapes")

    x = np.concatenate([f1, f2], axis=0)
    scores, inputs = _forward_cached(model, x)
    s1, s2 = scores[:n], scores[n:]
    losses = hinge_loss(s1, s2, labels, margin, variant)
    loss = float(losses.mean())

    # Active pairs have identical gradients under both variants:
    # dL/ds1 = -y, dL/ds2 = +y.
    active = (losses > 0).astype(f1.dtype)
    g = np.empty(2 * n, dtype=f1.dtype)
    g[:n] = -labels * active / n
    g[n:] = labels * active / n

    grads_w = [None] * len(model.weights)
    grads_b = [None] * len(model.biases)
    delta = g[:, None]
    for i in range(len(model.weights) - 1, -1, -1):
        grads_w[i] = delta.T @ inputs[i]
        grads_b[i] = delta.sum(axis=0)
        if i > 0:
            # Gradient flows only where the ReLU was active; its input was
            # inputs[i], which already holds max(pre, 0).
            delta = (delta @ model.weights[i]) * (inputs[i] > 0)
    return loss, grads_w, grads_b


def pair_gradient(model: RankerModel, f1: np.ndarray, f2: np.ndarray,
                  label: float, margin: float = 10.0, variant: str = "slack"):
    """Loss and gradients for a single pair (batch of one)."""
    return batch_gradient(model, np.asarray(f1)[None, :],
                          np.asarray(f2)[None, :],
                          np.asarray([label]), margin, variant)


@dataclass(frozen=True)
class TrainConfig:
    """Hyperparameters for ranker training."""

    hidden_dims: tuple[int, ...] = DEFAULT_HIDDEN_DIMS
    margin: float = 10.0
    learning_rate: float = 1e-3
    momentum: float = 0.9
    batch_size: int = 64
    epochs: int = 30
    seed: int = 0
    hinge_variant: str = "slack"
    validation_fraction: float = 0.1
    init_scale: float = 1.0
    stop_loss: float | None = None  # stop early once train loss falls below

    def __post_init__(self):
        check_positive(self.margin, "margin")
        check_positive(self.learning_rate, "learning_rate")
        check_fraction(self.momentum, "momentum", closed_top=False)
        check_fraction(self.validation_fraction, "validation_fraction",
                       closed_top=False)
        check_positive(self.init_scale, "init_scale")
        if self.batch_size < 1:
            raise ValidationError(f"batch_size must be >= 1, got "
                                  f"{self.batch_size}")
        if self.epochs < 0:
            raise ValidationError(f"epochs must be >= 0, got {self.epochs}")
        if self.hinge_variant not in HINGE_VARIANTS:
            raise ValidationError(f"unknown hinge variant "
                                  f"'{self.hinge_variant}'")
        if any(d < 1 for d in self.hidden_dims):
            raise ValidationError(f"hidden_dims must be positive, got "
                                  f"{self.hidden_dims}")


@dataclass(frozen=True)
class EpochStats:
    epoch: int
    train_loss: float
    val_loss: float


@dataclass
class TrainResult:
    model: RankerModel
    history: list[EpochStats] = field(default_factory=list)


def _dataset_loss(model: RankerModel, pairs: TrainingSet, idx: np.ndarray,
                  cfg: TrainConfig, eval_batch: int = 512) -> float:
    if idx.size == 0:
        return 0.0
    total = 0.0
    for start in range(0, idx.size, eval_batch):
        chunk = idx[start:start + eval_batch]
        f1, f2 = pairs.features_for(chunk)
        x = np.concatenate([f1, f2], axis=0)
        scores = forward(model, x)
        losses = hinge_loss(scores[:len(chunk)], scores[len(chunk):],
                            pairs.labels[chunk], cfg.margin, cfg.hinge_variant)
        total += float(losses.sum())
    return total / idx.size


def train_ranker(pairs: TrainingSet, cfg: TrainConfig = TrainConfig()) -> TrainResult:
    """Train a ranker on a pair set; returns the best-validation snapshot.

    Deterministic given ``cfg.seed``: the same seed yields bit-identical
    parameters.  With ``epochs == 0`` the freshly initialized model is
    returned unchanged.
    """
    n = len(pairs)
    if n == 0:
        raise ValidationError("train_ranker: empty pair set")
    dims = (pairs.feature_dim, *cfg.hidden_dims, 1)
    model = init_model(dims, seed=cfg.seed, init_scale=cfg.init_scale)

    rng = np.random.default_rng(cfg.seed)
    perm = rng.permutation(n)
    n_val = min(int(round(n * cfg.validation_fraction)), n - 1)
    val_idx, train_idx = perm[:n_val], perm[n_val:]

    velocity_w = [np.zeros_like(w) for w in model.weights]
    velocity_b = [np.zeros_like(b) for b in model.biases]

    def _val_loss(m: RankerModel) -> float:
        target = val_idx if n_val else train_idx
        return _dataset_loss(m, pairs, target, cfg)

    best = model.copy()
    best_loss = _val_loss(model)
    best_epoch = 0
    history: list[EpochStats] = []

    for epoch in range(1, cfg.epochs + 1):
        order = train_idx[rng.permutation(train_idx.size)]
        running, seen = 0.0, 0
        for start in range(0, order.size, cfg.batch_size):
            batch = order[start:start + cfg.batch_size]
            f1, f2 = pairs.features_for(batch)
            loss, grads_w, grads_b = batch_gradient(
                model, f1, f2, pairs.labels[batch], cfg.margin,
                cfg.hinge_variant)
            if not np.isfinite(loss):
                raise TrainingError(f"non-finite loss at epoch {epoch}, "
                                    f"batch {start // cfg.batch_size}")
            for i in range(len(model.weights)):
                velocity_w[i] = cfg.momentum * velocity_w[i] \
                    - cfg.learning_rate * grads_w[i]
                velocity_b[i] = cfg.momentum * velocity_b[i] \
                    - cfg.learning_rate * grads_b[i]
                model.weights[i] += velocity_w[i]
                model.biases[i] += velocity_b[i]
            running += loss * batch.size
            seen += batch.size
        train_loss = running / max(seen, 1)
        val_loss = _val_loss(model) if n_val else train_loss
        history.append(EpochStats(epoch=epoch, train_loss=train_loss,
                                  val_loss=val_loss))
        log.info("epoch %d: train_loss=%.6f val_loss=%.6f", epoch,
                 train_loss, val_loss)
        if val_loss < best_loss:
            best, best_loss, best_epoch = model.copy(), val_loss, epoch
        if cfg.stop_loss is not None and train_loss <= cfg.stop_loss:
            break

    best.seed, best.epoch, best.loss = cfg.seed, best_epoch, float(best_loss)
    return TrainResult(model=best, history=history)


class SaliencyRanker(BaseEstimator):
    """Estimator wrapper around the pairwise ranker.

    ``fit`` expects ``X`` of shape (n_pairs, 2, d) (or an equivalent
    (n_pairs, 2*d) matrix holding the two proposals side by side) and
    ``y`` in {+1, -1}, +1 meaning the first proposal of the pair should
    rank higher.  ``decision_function`` scores single proposals (n, d);
    ``predict`` orders pairs.
    """

    def __init__(self, hidden_dims=DEFAULT_HIDDEN_DIMS, margin=10.0,
                 learning_rate=1e-3, momentum=0.9, batch_size=64, epochs=30,
                 hinge_variant="slack", validation_fraction=0.1,
                 init_scale=1.0, stop_loss=None, random_state=0):
        self.hidden_dims = hidden_dims
        self.margin = margin
        self.learning_rate = learning_rate
        self.momentum = momentum
        self.batch_size = batch_size
        self.epochs = epochs
        self.hinge_variant = hinge_variant
        self.validation_fraction = validation_fraction
        self.init_scale = init_scale
        self.stop_loss = stop_loss
        self.random_state = random_state

    def _config(self) -> TrainConfig:
        return TrainConfig(
            hidden_dims=tuple(self.hidden_dims), margin=self.margin,
            learning_rate=self.learning_rate, momentum=self.momentum,
            batch_size=self.batch_size, epochs=self.epochs,
            seed=self.random_state, hinge_variant=self.hinge_variant,
            validation_fraction=self.validation_fraction,
            init_scale=self.init_scale, stop_loss=self.stop_loss)

    @staticmethod
    def _split_pairs(X) -> tuple[np.ndarray, np.ndarray]:
        X = np.asarray(X, dtype=np.float32)
        if X.ndim == 3 and X.shape[1] == 2:
            return X[:, 0, :], X[:, 1, :]
        if X.ndim == 2 and X.shape[1] % 2 == 0:
            half = X.shape[1] // 2
            return X[:, :half], X[:, half:]
        raise ValidationError(f"pair matrix must be (n, 2, d) or (n, 2d), "
                              f"got shape {X.shape}")

    def fit(self, X, y):
        f1, f2 = self._split_pairs(X)
        y = np.asarray(y)
        if y.shape != (f1.shape[0],) or not np.all(np.abs(y) == 1):
            raise ValidationError("labels must be one +1/-1 value per pair")
        result = train_ranker(TrainingSet.from_arrays(f1, f2, y),
                              self._config())
        self.model_ = result.model
        self.history_ = result.history
        self.n_features_in_ = f1.shape[1]
        return self

    def _check_fitted(self):
        if not hasattr(self, "model_"):
            raise ValidationError("estimator is not fitted yet")

    def decision_function(self, X) -> np.ndarray:
        """Scores for single proposal features, shape (n, d) -> (n,)."""
        self._check_fitted()
        X = np.asarray(X, dtype=np.float32)
        if X.ndim == 1:
            X = X[None, :]
        return np.asarray(forward(self.model_, X))

    def predict(self, X) -> np.ndarray:
        """Pair orderings: +1 when the first proposal scores higher."""
        self._check_fitted()
        f1, f2 = self._split_pairs(X)
        s1 = forward(self.model_, f1)
        s2 = forward(self.model_, f2)
        return np.where(s1 > s2, 1, -1)

    def score(self, X, y) -> float:
        """Fraction of pairs ordered consistently with their labels."""
        y = np.asarray(y)
        return float((self.predict(X) == y).mean())

    def save(self, path) -> None:
        from .dataio import save_checkpoint

        self._check_fitted()
        save_checkpoint(self.model_.to_checkpoint(), path)

    @classmethod
    def load(cls, path) -> "SaliencyRanker":
        from .dataio import load_checkpoint

        ckpt = load_checkpoint(path)
        model = RankerModel.from_checkpoint(ckpt)
        est = cls(hidden_dims=model.dims[1:-1], random_state=model.seed)
        est.model_ = model
        est.n_features_in_ = model.input_dim
        return est
