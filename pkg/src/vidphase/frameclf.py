"""Single-frame phase classifier trained on noisy motion-derived labels.

A small rectifier network ``[D, H, 2]`` with a softmax output. Parameters
are stored in float32; forward and backward passes run in float64. The
hidden-layer activations serve as frame embeddings for the temporal model.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from . import dataio
from ._validation import check_features, check_phase_labels

logger = logging.getLogger(__name__)

PHASES = np.array([1, 2])


class UnsatisfiableBalanceError(ValueError):
    """A phase is absent from the labels, so balanced sampling is impossible."""


@dataclass
class MlpModel:
    dims: list
    weights: list = field(default_factory=list)  # (fan_in, fan_out) float32
    biases: list = field(default_factory=list)

    @property
    def hidden(self) -> bool:
        return len(self.dims) > 2

    @property
    def n_params(self) -> int:
        return sum(w.size + b.size for w, b in zip(self.weights, self.biases))

    def params(self) -> list:
        out = []
        for w, b in zip(self.weights, self.biases):
            out += [w, b]
        return out

    def astype(self, dtype) -> "MlpModel":
        return MlpModel(list(self.dims), [w.astype(dtype) for w in self.weights],
                        [b.astype(dtype) for b in self.biases])

    def save(self, directory) -> None:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        acts = ["relu"] * (len(self.dims) - 2) + ["softmax"]
        lines = ["kind = mlp", "dims = " + " ".join(map(str, self.dims)),
                 "activations = " + " ".join(acts)]
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            dataio.store_tensor(w, directory / f"layer{i}.weight.ptns")
            dataio.store_tensor(b, directory / f"layer{i}.bias.ptns")
            lines.append(f"layer{i} = layer{i}.weight.ptns layer{i}.bias.ptns")
        (directory / "manifest.txt").write_text("\n".join(lines) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, directory) -> "MlpModel":
        directory = Path(directory)
        manifest = _read_manifest(directory / "manifest.txt")
        if manifest.get("kind") != "mlp":
            raise ValueError(f"{directory} does not hold an mlp model")
        dims = [int(x) for x in manifest["dims"].split()]
        weights, biases = [], []
        for i in range(len(dims) - 1):
            w = dataio.load_tensor(directory / f"layer{i}.weight.ptns")
            b = dataio.load_tensor(directory / f"layer{i}.bias.ptns")
            if w.shape != (dims[i], dims[i + 1]) or b.shape != (dims[i + 1],):
                raise ValueError(f"layer {i} tensors do not match dims {dims}")
            weights.append(w)
            biases.append(b)
        return cls(dims, weights, biases)


def _read_manifest(path) -> dict:
    out = {}
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        line = line.split("#", 1)[0].strip()
        if line:
            key, _, value = line.partition("=")
            out[key.strip()] = value.strip()
    return out


def glorot_uniform(rng: np.random.Generator, fan_in: int, fan_out: int, shape=None) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, shape if shape is not None else (fan_in, fan_out)).astype(np.float32)


def init_model(dims=(26, 16, 2), seed: int = 0) -> MlpModel:
    """Glorot-uniform weights and zero biases, deterministic in ``seed``."""
    dims = [int(d) for d in dims]
    if len(dims) < 2 or min(dims) < 1:
        raise ValueError(f"invalid layer dims {dims}")
    rng = np.random.default_rng(seed)
    weights = [glorot_uniform(rng, a, b) for a, b in zip(dims[:-1], dims[1:])]
    biases = [np.zeros(b, dtype=np.float32) for b in dims[1:]]
    return MlpModel(dims, weights, biases)


def _log_softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def forward(model: MlpModel, X: np.ndarray, dtype=np.float64):
    """Returns ``(log_probs, activations)``; activations[i] is the input to layer i."""
    acts = [np.asarray(X, dtype=dtype)]
    h = acts[0]
    n_layers = len(model.weights)
    for i, (w, b) in enumerate(zip(model.weights, model.biases)):
        z = h @ w.astype(dtype) + b.astype(dtype)
        if i < n_layers - 1:
            h = np.maximum(z, 0.0)
            acts.append(h)
        else:
            h = z
    return _log_softmax(h), acts


def loss_and_grads(model: MlpModel, X: np.ndarray, y_idx: np.ndarray, dtype=np.float64):
    """Mean cross-entropy and its exact gradient w.r.t. every parameter."""
    logp, acts = forward(model, X, dtype)
    n = len(X)
    loss = -logp[np.arange(n), y_idx].mean()
    delta = np.exp(logp)
    delta[np.arange(n), y_idx] -= 1.0
    delta /= n
    gw, gb = [], []
    for i in reversed(range(len(model.weights))):
        gw.append(acts[i].T @ delta)
        gb.append(delta.sum(axis=0))
        if i > 0:
            delta = (delta @ model.weights[i].astype(dtype).T) * (acts[i] > 0)
    return float(loss), gw[::-1], gb[::-1]


def predict_proba(model: MlpModel, features) -> np.ndarray:
    features = np.asarray(features, dtype=np.float64)
    single = features.ndim == 1
    logp, _ = forward(model, features[None] if single else features)
    p = np.exp(logp)
    return p[0] if single else p


def embed(model: MlpModel, features) -> np.ndarray:
    """Penultimate-layer (post-rectifier) activations."""
    if not model.hidden:
        raise ValueError("a model without a hidden layer has no embedding")
    features = np.asarray(features, dtype=np.float64)
    single = features.ndim == 1
    _, acts = forward(model, features[None] if single else features)
    return acts[-1][0] if single else acts[-1]


def balanced_sample(y_idx: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    """Indices of ``min(k, smallest class count)`` examples per class, drawn without replacement."""
    groups = [np.flatnonzero(y_idx == c) for c in (0, 1)]
    counts = [len(g) for g in groups]
    if min(counts) == 0:
        raise UnsatisfiableBalanceError(f"class counts {counts}: both phases must be present")
    k = min(k, *counts)
    picks = [rng.choice(g, size=k, replace=False) for g in groups]
    return np.concatenate(picks)


@dataclass
class TrainConfig:
    learning_rate: float = 0.05
    momentum: float = 0.9
    batch_size: int = 64
    epochs: int = 30
    seed: int = 0
    samples_per_class: int = 5000
    hidden: int = 16

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if self.samples_per_class < 1:
            raise ValueError("samples_per_class must be >= 1")
        if self.batch_size < 1 or self.epochs < 0:
            raise ValueError("batch_size must be >= 1 and epochs >= 0")


def train_model(X, y, cfg: TrainConfig = TrainConfig(), model: MlpModel | None = None):
    """Fit by mini-batch SGD with momentum on a class-balanced sample.

    Parameters
    ----------
    X : array-like, shape (n, D)
    y : array-like, shape (n,)
        Phase labels in {1, 2}, typically noisy.

    Returns
    -------
    model : MlpModel
    history : list of float
        Mean training loss per epoch over the balanced sample.
    """
    X = check_features(X)
    y_idx = check_phase_labels(y)
    if len(X) != len(y_idx):
        raise ValueError("X and y lengths differ")
    rng = np.random.default_rng(cfg.seed)
    idx = balanced_sample(y_idx, cfg.samples_per_class, rng)
    Xs, ys = X[idx], y_idx[idx]
    if model is None:
        dims = [X.shape[1], cfg.hidden, 2] if cfg.hidden else [X.shape[1], 2]
        model = init_model(dims, cfg.seed)
    model = model.astype(np.float32)
    params = model.params()
    velocity = [np.zeros(p.shape, dtype=np.float64) for p in params]
    history = []
    n = len(Xs)
    for epoch in range(cfg.epochs):
        order = rng.permutation(n)
        total = 0.0
        for start in range(0, n, cfg.batch_size):
            batch = order[start : start + cfg.batch_size]
            loss, gw, gb = loss_and_grads(model, Xs[batch], ys[batch])
            total += loss * len(batch)
            grads = [g for pair in zip(gw, gb) for g in pair]
            for p, v, g in zip(params, velocity, grads):
                v *= cfg.momentum
                v -= cfg.learning_rate * g
                p += v.astype(np.float32)
        history.append(total / n)
        logger.debug("frame classifier epoch %d loss %.5f", epoch, history[-1])
    return model, history


class FrameClassifier(ClassifierMixin, TransformerMixin, BaseEstimator):
    """Weakly supervised frame phase classifier.

    ``predict_proba`` returns phase probabilities; ``transform`` returns the
    penultimate-layer embedding used as input to the temporal model.
    """

    def __init__(self, hidden=16, learning_rate=0.05, momentum=0.9, batch_size=64, epochs=30,
                 samples_per_class=5000, seed=0):
        self.hidden = hidden
        self.learning_rate = learning_rate
        self.momentum = momentum
        self.batch_size = batch_size
        self.epochs = epochs
        self.samples_per_class = samples_per_class
        self.seed = seed

    def _config(self) -> TrainConfig:
        return TrainConfig(self.learning_rate, self.momentum, self.batch_size, self.epochs,
                           self.seed, self.samples_per_class, self.hidden)

    def fit(self, X, y):
        X = check_features(X)
        self.model_, self.loss_curve_ = train_model(X, y, self._config())
        self.classes_ = PHASES.copy()
        self.n_features_in_ = X.shape[1]
        y_idx = check_phase_labels(y)
        self.train_accuracy_ = float((self.predict(X) - 1 == y_idx).mean())
        logger.info("frame classifier: final loss %.4f, accuracy vs weak labels %.4f",
                    self.loss_curve_[-1] if self.loss_curve_ else float("nan"), self.train_accuracy_)
        return self

    def predict_proba(self, X):
        check_is_fitted(self, "model_")
        return predict_proba(self.model_, check_features(X, self.n_features_in_))

    def predict(self, X):
        return self.classes_[np.argmax(self.predict_proba(X), axis=1)]

    def transform(self, X):
        check_is_fitted(self, "model_")
        return embed(self.model_, check_features(X, self.n_features_in_))

    @classmethod
    def from_model(cls, model: MlpModel) -> "FrameClassifier":
        clf = cls(hidden=model.dims[1] if model.hidden else 0)
        clf.model_ = model
        clf.loss_curve_ = []
        clf.classes_ = PHASES.copy()
        clf.n_features_in_ = model.dims[0]
        return clf


def train(features_per_video, labels_per_video, cfg: TrainConfig = TrainConfig()) -> FrameClassifier:
    """Pool every frame of every video and fit a :class:`FrameClassifier`."""
    X = np.concatenate([np.asarray(f, dtype=np.float64) for f in features_per_video])
    y = np.concatenate([np.asarray(l) for l in labels_per_video])
    clf = FrameClassifier(cfg.hidden, cfg.learning_rate, cfg.momentum, cfg.batch_size, cfg.epochs,
                          cfg.samples_per_class, cfg.seed)
    return clf.fit(X, y)
