"""Hand-crafted per-frame appearance descriptors and their normalization.

The descriptor targets the cues that separate the two phases visually:
wall contact (bright, flat, no lumen) against a clear view of the dark
lumen, overall brightness, and texture energy.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from ._validation import check_features

N_FEATURES = 26
N_BINS = 16
DARK_LEVEL = 32
BRIGHT_LEVEL = 224
STD_FLOOR = 1e-8

FEATURE_NAMES = (
    [f"hist_{i:02d}" for i in range(N_BINS)]
    + ["mean", "std", "dark_fraction", "bright_fraction", "gradient_energy",
       "center_periphery_ratio", "radial_slope", "frame_difference", "reserved_0", "reserved_1"]
)


def _luma(frames: np.ndarray) -> np.ndarray:
    frames = np.asarray(frames)
    if frames.ndim == 4 and frames.shape[-1] == 3:
        return frames @ np.array([0.299, 0.587, 0.114])
    return frames.astype(np.float64)


def _radius_map(h: int, w: int) -> np.ndarray:
    ys, xs = np.mgrid[0:h, 0:w]
    r = np.hypot(xs - (w - 1) / 2.0, ys - (h - 1) / 2.0)
    return r / (min(h, w) / 2.0)


def extract_video_features(frames: np.ndarray) -> np.ndarray:
    """Descriptors for a whole ``(T, H, W[, 3])`` video; returns ``(T, 26)``.

    The frame-difference entry of frame ``t`` is taken against frame
    ``t - 1`` and is zero for the first frame.
    """
    gray = _luma(frames)
    if gray.ndim != 3:
        raise ValueError(f"expected a (T, H, W) video, got shape {np.shape(frames)}")
    T, h, w = gray.shape
    out = np.zeros((T, N_FEATURES))
    flat = gray.reshape(T, -1)
    bins = np.clip((flat // (256 // N_BINS)).astype(np.int64), 0, N_BINS - 1)
    offsets = np.arange(T)[:, None] * N_BINS
    out[:, :N_BINS] = np.bincount((bins + offsets).ravel(), minlength=T * N_BINS).reshape(T, N_BINS)
    out[:, :N_BINS] /= flat.shape[1]

    unit = gray / 255.0
    out[:, 16] = unit.reshape(T, -1).mean(axis=1)
    out[:, 17] = unit.reshape(T, -1).std(axis=1)
    out[:, 18] = (flat < DARK_LEVEL).mean(axis=1)
    out[:, 19] = (flat > BRIGHT_LEVEL).mean(axis=1)

    gx = np.zeros_like(unit)
    gy = np.zeros_like(unit)
    gx[:, :, 1:-1] = 0.5 * (unit[:, :, 2:] - unit[:, :, :-2])
    gy[:, 1:-1, :] = 0.5 * (unit[:, 2:, :] - unit[:, :-2, :])
    out[:, 20] = (gx[:, 1:-1, 1:-1] ** 2 + gy[:, 1:-1, 1:-1] ** 2).reshape(T, -1).mean(axis=1)

    r = _radius_map(h, w)
    center = r < 0.5
    periphery = r > 0.7
    c_mean = unit[:, center].mean(axis=1)
    p_mean = unit[:, periphery].mean(axis=1)
    out[:, 21] = (c_mean + 1e-3) / (p_mean + 1e-3)

    # least-squares slope of brightness against normalized radius
    rc = r.reshape(-1) - r.mean()
    out[:, 22] = (unit.reshape(T, -1) - out[:, 16:17]) @ rc / (rc @ rc)

    if T > 1:
        out[1:, 23] = ((unit[1:] - unit[:-1]) ** 2).reshape(T - 1, -1).mean(axis=1)
    return out


def extract_features(frame: np.ndarray, prev_frame: np.ndarray | None = None) -> np.ndarray:
    """26-dim descriptor of one frame.

    Examples
    --------
    >>> f = extract_features(np.zeros((16, 16), dtype=np.uint8))
    >>> float(f[16]), float(f[18]), float(f[20])
    (0.0, 1.0, 0.0)
    """
    frame = np.asarray(frame)
    if prev_frame is None:
        return extract_video_features(frame[None])[0]
    prev_frame = np.asarray(prev_frame)
    if prev_frame.shape != frame.shape:
        raise ValueError("frame and prev_frame shapes differ")
    return extract_video_features(np.stack([prev_frame, frame]))[1]


class FeatureNormalizer(TransformerMixin, BaseEstimator):
    """Per-dimension standardization with a floored standard deviation."""

    def __init__(self, std_floor: float = STD_FLOOR):
        self.std_floor = std_floor

    def fit(self, X, y=None):
        X = check_features(X)
        self.mean_ = X.mean(axis=0)
        self.scale_ = np.maximum(X.std(axis=0), self.std_floor)
        self.n_features_in_ = X.shape[1]
        return self

    def transform(self, X):
        check_is_fitted(self, "mean_")
        X = check_features(X, self.n_features_in_)
        return (X - self.mean_) / self.scale_

    def inverse_transform(self, X):
        check_is_fitted(self, "mean_")
        X = check_features(X, self.n_features_in_)
        return X * self.scale_ + self.mean_

    def to_tensor(self) -> np.ndarray:
        """Stack mean and scale into a ``(2, D)`` array for storage."""
        check_is_fitted(self, "mean_")
        return np.stack([self.mean_, self.scale_])

    @classmethod
    def from_tensor(cls, stats) -> "FeatureNormalizer":
        stats = np.asarray(stats, dtype=np.float64)
        if stats.ndim != 2 or stats.shape[0] != 2:
            raise ValueError(f"normalizer tensor must have shape (2, D), got {stats.shape}")
        n = cls()
        n.mean_ = stats[0].copy()
        n.scale_ = np.maximum(stats[1], n.std_floor)
        n.n_features_in_ = stats.shape[1]
        return n


def fit_normalizer(features) -> FeatureNormalizer:
    return FeatureNormalizer().fit(features)


def apply_normalizer(normalizer: FeatureNormalizer, features) -> np.ndarray:
    features = np.asarray(features, dtype=np.float64)
    if features.ndim == 1:
        return normalizer.transform(features[None])[0]
    return normalizer.transform(features)
