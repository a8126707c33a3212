"""Multi-stage temporal convolutional network (MS-TCN) in numpy.

Each stage maps its input sequence to per-frame class probabilities through
a 1x1 projection, a stack of dilated residual layers (dilation doubles per
layer; dilated conv, rectifier, 1x1 conv, residual add) and a 1x1 output
projection. Every stage after the first refines the softmax output of the
previous one. Convolutions are non-causal with zero padding at the borders.

Training uses whole-video full-batch Adam steps with exact backpropagation
through all stages. The loss per stage is frame-wise cross-entropy plus a
truncated mean-squared penalty on consecutive-frame log-probabilities.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from . import dataio
from ._validation import check_sequences
from .frameclf import _log_softmax, _read_manifest, glorot_uniform

logger = logging.getLogger(__name__)


def receptive_field(layers: int, kernel: int = 3) -> int:
    """Frames seen by one stage: ``1 + (kernel - 1) * (2**layers - 1)``."""
    if layers < 0 or kernel < 1:
        raise ValueError("layers must be >= 0 and kernel >= 1")
    return 1 + (kernel - 1) * (2**layers - 1)


@dataclass
class TcnConfig:
    stages: int = 2
    layers: int = 6
    channels: int = 32
    classes: int = 2
    kernel: int = 3
    smoothing: float = 0.15
    truncation: float = 4.0
    learning_rate: float = 5e-3
    epochs: int = 15
    seed: int = 0

    def __post_init__(self):
        if self.stages < 1 or self.layers < 1:
            raise ValueError("stages and layers must be >= 1")
        if self.kernel < 1 or self.kernel % 2 == 0:
            raise ValueError("kernel must be a positive odd integer")
        if self.channels < 1 or self.classes < 2:
            raise ValueError("channels must be >= 1 and classes >= 2")


@dataclass
class Stage:
    w_in: np.ndarray  # (D, C)
    b_in: np.ndarray
    w_dil: list  # per layer (k, C, C)
    b_dil: list
    w_pt: list  # per layer (C, C)
    b_pt: list
    w_out: np.ndarray  # (C, K)
    b_out: np.ndarray

    def params(self) -> list:
        out = [self.w_in, self.b_in]
        for a, b, c, d in zip(self.w_dil, self.b_dil, self.w_pt, self.b_pt):
            out += [a, b, c, d]
        return out + [self.w_out, self.b_out]

    @classmethod
    def from_params(cls, params: list) -> "Stage":
        n_layers = (len(params) - 4) // 4
        layer = params[2 : 2 + 4 * n_layers]
        return cls(params[0], params[1], layer[0::4], layer[1::4], layer[2::4], layer[3::4],
                   params[-2], params[-1])


@dataclass
class MsTcnModel:
    input_dim: int
    config: TcnConfig
    stages: list = field(default_factory=list)

    def params(self) -> list:
        return [p for s in self.stages for p in s.params()]

    @property
    def n_params(self) -> int:
        return sum(p.size for p in self.params())

    def astype(self, dtype) -> "MsTcnModel":
        return MsTcnModel(self.input_dim, self.config,
                          [Stage.from_params([p.astype(dtype) for p in s.params()]) for s in self.stages])

    def save(self, directory) -> None:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        c = self.config
        lines = [
            "kind = mstcn",
            f"input_dim = {self.input_dim}",
            f"stages = {c.stages}",
            f"layers = {c.layers}",
            f"channels = {c.channels}",
            f"classes = {c.classes}",
            f"kernel = {c.kernel}",
            "activations = relu softmax",
        ]
        for s, stage in enumerate(self.stages):
            for i, p in enumerate(stage.params()):
                name = f"stage{s}.param{i:03d}.ptns"
                dataio.store_tensor(p, directory / name)
        (directory / "manifest.txt").write_text("\n".join(lines) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, directory) -> "MsTcnModel":
        directory = Path(directory)
        m = _read_manifest(directory / "manifest.txt")
        if m.get("kind") != "mstcn":
            raise ValueError(f"{directory} does not hold an mstcn model")
        cfg = TcnConfig(stages=int(m["stages"]), layers=int(m["layers"]), channels=int(m["channels"]),
                        classes=int(m["classes"]), kernel=int(m["kernel"]))
        template = init_tcn(cfg, int(m["input_dim"]), 0)
        stages = []
        for s, stage in enumerate(template.stages):
            params = []
            for i, ref in enumerate(stage.params()):
                p = dataio.load_tensor(directory / f"stage{s}.param{i:03d}.ptns")
                if p.shape != ref.shape:
                    raise ValueError(f"stage {s} parameter {i} has shape {p.shape}, expected {ref.shape}")
                params.append(p)
            stages.append(Stage.from_params(params))
        return cls(int(m["input_dim"]), cfg, stages)


def init_tcn(cfg: TcnConfig, input_dim: int, seed: int = 0) -> MsTcnModel:
    """Glorot-uniform weights, zero biases; stage ``s > 0`` takes ``classes`` inputs."""
    rng = np.random.default_rng(seed)
    C, K, k = cfg.channels, cfg.classes, cfg.kernel
    stages = []
    for s in range(cfg.stages):
        d_in = input_dim if s == 0 else K
        w_dil = [glorot_uniform(rng, k * C, C, (k, C, C)) for _ in range(cfg.layers)]
        w_pt = [glorot_uniform(rng, C, C) for _ in range(cfg.layers)]
        stages.append(Stage(
            glorot_uniform(rng, d_in, C), np.zeros(C, np.float32),
            w_dil, [np.zeros(C, np.float32) for _ in range(cfg.layers)],
            w_pt, [np.zeros(C, np.float32) for _ in range(cfg.layers)],
            glorot_uniform(rng, C, K), np.zeros(K, np.float32),
        ))
    return MsTcnModel(int(input_dim), cfg, stages)


def _shift(x: np.ndarray, offset: int) -> np.ndarray:
    """``out[t] = x[t + offset]`` with zeros outside the sequence."""
    out = np.zeros_like(x)
    T = len(x)
    if offset >= 0:
        if offset < T:
            out[: T - offset] = x[offset:]
    elif -offset < T:
        out[-offset:] = x[: T + offset]
    return out


def _offsets(kernel: int, dilation: int) -> list:
    half = kernel // 2
    return [(j - half) * dilation for j in range(kernel)]


def _stage_forward(stage: Stage, x: np.ndarray, kernel: int):
    h = x @ stage.w_in + stage.b_in
    cache = {"x": x, "layers": []}
    for l, (wd, bd, wp, bp) in enumerate(zip(stage.w_dil, stage.b_dil, stage.w_pt, stage.b_pt)):
        offs = _offsets(kernel, 2**l)
        z = bd + sum(_shift(h, o) @ wd[j] for j, o in enumerate(offs))
        a = np.maximum(z, 0.0)
        cache["layers"].append((h, z, a, offs))
        h = h + a @ wp + bp
    cache["h"] = h
    logp = _log_softmax(h @ stage.w_out + stage.b_out)
    return logp, cache


def _stage_backward(stage: Stage, cache, dlogp: np.ndarray, p: np.ndarray):
    """Gradients of the stage parameters and of its input, given dL/dlogp."""
    dlogits = dlogp - p * dlogp.sum(axis=1, keepdims=True)
    h = cache["h"]
    grads_out = (h.T @ dlogits, dlogits.sum(axis=0))
    dh = dlogits @ stage.w_out.T
    layer_grads = []
    for l in reversed(range(len(stage.w_dil))):
        h_in, z, a, offs = cache["layers"][l]
        dwp = a.T @ dh
        dbp = dh.sum(axis=0)
        dz = (dh @ stage.w_pt[l].T) * (z > 0)
        dbd = dz.sum(axis=0)
        dwd = np.stack([_shift(h_in, o).T @ dz for o in offs])
        dh_in = dh.copy()
        for j, o in enumerate(offs):
            dh_in += _shift(dz @ stage.w_dil[l][j].T, -o)
        layer_grads.append((dwd, dbd, dwp, dbp))
        dh = dh_in
    layer_grads.reverse()
    x = cache["x"]
    grads = [x.T @ dh, dh.sum(axis=0)]
    for g in layer_grads:
        grads += list(g)
    grads += list(grads_out)
    dx = dh @ stage.w_in.T
    return grads, dx


def forward(model: MsTcnModel, x, dtype=np.float64, return_cache: bool = False):
    """Per-stage probabilities, shape ``(S, T, K)``."""
    x = np.asarray(x, dtype=dtype)
    if x.ndim != 2 or x.shape[1] != model.input_dim:
        raise ValueError(f"expected a (T, {model.input_dim}) sequence, got {x.shape}")
    if len(x) < 1:
        raise ValueError("sequence must contain at least one frame")
    m = model if dtype == np.float32 else model.astype(dtype)
    logps, caches = [], []
    inp = x
    for stage in m.stages:
        logp, cache = _stage_forward(stage, inp, model.config.kernel)
        logps.append(logp)
        caches.append(cache)
        inp = np.exp(logp)
    probs = np.exp(np.stack(logps))
    if return_cache:
        return probs, (m, logps, caches)
    return probs


def stage_loss(logp: np.ndarray, y_idx: np.ndarray, smoothing: float, truncation: float):
    """Cross-entropy plus truncated smoothing for one stage; returns ``(loss, dL/dlogp)``."""
    T, K = logp.shape
    ce = -logp[np.arange(T), y_idx].mean()
    d = np.zeros_like(logp)
    d[np.arange(T), y_idx] = -1.0 / T
    loss = ce
    if T > 1 and smoothing > 0:
        diff = logp[1:] - logp[:-1]
        sq = diff * diff
        cap = truncation * truncation
        loss += smoothing * np.minimum(sq, cap).mean()
        g = smoothing * 2.0 * diff * (sq < cap) / ((T - 1) * K)
        d[1:] += g
        d[:-1] -= g
    return float(loss), d


def loss(stage_probs, labels, smoothing: float = 0.15, truncation: float = 4.0) -> float:
    """Sum over stages of cross-entropy plus ``smoothing`` x truncated MSE of log-probabilities.

    ``labels`` are phase labels in {1, 2}. Probabilities are floored at the
    smallest positive double so one-hot inputs give finite values.
    """
    y_idx = np.asarray(labels, dtype=np.int64) - 1
    total = 0.0
    for p in np.asarray(stage_probs, dtype=np.float64):
        logp = np.log(np.maximum(p, np.finfo(np.float64).tiny))
        total += stage_loss(logp, y_idx, smoothing, truncation)[0]
    return total


def loss_and_grads(model: MsTcnModel, x, y_idx, dtype=np.float64):
    """Total loss over stages and gradients in ``model.params()`` order."""
    cfg = model.config
    _, (m, logps, caches) = forward(model, x, dtype, return_cache=True)
    total = 0.0
    grads_per_stage = [None] * len(m.stages)
    d_next = None  # dL/d(input of the following stage) = dL/dp of this stage
    for s in reversed(range(len(m.stages))):
        logp = logps[s]
        p = np.exp(logp)
        l, dlogp = stage_loss(logp, y_idx, cfg.smoothing, cfg.truncation)
        total += l
        if d_next is not None:
            dlogp = dlogp + d_next * p
        grads, dx = _stage_backward(m.stages[s], caches[s], dlogp, p)
        grads_per_stage[s] = grads
        d_next = dx
    return total, [g for gs in grads_per_stage for g in gs]


class Adam:
    def __init__(self, params, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = params
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = [np.zeros(p.shape) for p in params]
        self.v = [np.zeros(p.shape) for p in params]
        self.t = 0

    def step(self, grads):
        self.t += 1
        c1 = 1 - self.beta1**self.t
        c2 = 1 - self.beta2**self.t
        for p, m, v, g in zip(self.params, self.m, self.v, grads):
            m *= self.beta1
            m += (1 - self.beta1) * g
            v *= self.beta2
            v += (1 - self.beta2) * g * g
            p -= (self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)).astype(p.dtype)


def train_tcn(model: MsTcnModel, sequences, labels, cfg: TcnConfig | None = None):
    """Train in place-free fashion; returns ``(model, per-epoch mean loss)``.

    Each epoch visits every video once in a seeded random order and takes one
    full-sequence Adam step per video.
    """
    cfg = cfg or model.config
    seqs, ys = check_sequences(sequences, labels, model.input_dim)
    model = model.astype(np.float32)
    params = model.params()
    opt = Adam(params, lr=cfg.learning_rate)
    rng = np.random.default_rng(cfg.seed)
    history = []
    for epoch in range(cfg.epochs):
        total = 0.0
        for i in rng.permutation(len(seqs)):
            l, grads = loss_and_grads(model, seqs[i], ys[i])
            opt.step(grads)
            total += l
        history.append(total / len(seqs))
        logger.info("tcn epoch %d loss %.5f", epoch, history[-1])
    return model, history


class MSTCN(BaseEstimator):
    """Sequence-level estimator: ``fit`` takes lists of ``(T_i, D)`` arrays and
    per-frame phase labels; ``predict_proba`` returns final-stage ``(T, 2)``
    probabilities (or a list for a list input)."""

    def __init__(self, stages=2, layers=6, channels=32, kernel=3, smoothing=0.15, truncation=4.0,
                 learning_rate=5e-3, epochs=15, seed=0):
        self.stages = stages
        self.layers = layers
        self.channels = channels
        self.kernel = kernel
        self.smoothing = smoothing
        self.truncation = truncation
        self.learning_rate = learning_rate
        self.epochs = epochs
        self.seed = seed

    def _config(self) -> TcnConfig:
        return TcnConfig(self.stages, self.layers, self.channels, 2, self.kernel, self.smoothing,
                         self.truncation, self.learning_rate, self.epochs, self.seed)

    def fit(self, X, y):
        seqs, _ = check_sequences(X, y)
        cfg = self._config()
        model = init_tcn(cfg, seqs[0].shape[1], cfg.seed)
        self.model_, self.loss_curve_ = train_tcn(model, seqs, y, cfg)
        self.n_features_in_ = seqs[0].shape[1]
        return self

    @property
    def receptive_field_(self) -> int:
        return receptive_field(self.layers, self.kernel)

    def predict_stages(self, x) -> np.ndarray:
        check_is_fitted(self, "model_")
        return forward(self.model_, x)

    def predict_proba(self, X):
        check_is_fitted(self, "model_")
        if isinstance(X, np.ndarray) and X.ndim == 2:
            return forward(self.model_, X)[-1]
        return [forward(self.model_, x)[-1] for x in X]

    def predict(self, X):
        p = self.predict_proba(X)
        if isinstance(p, list):
            return [np.argmax(q, axis=1) + 1 for q in p]
        return np.argmax(p, axis=1) + 1

    @classmethod
    def from_model(cls, model: MsTcnModel) -> "MSTCN":
        c = model.config
        est = cls(c.stages, c.layers, c.channels, c.kernel, c.smoothing, c.truncation,
                  c.learning_rate, c.epochs, c.seed)
        est.model_ = model
        est.loss_curve_ = []
        est.n_features_in_ = model.input_dim
        return est
