"""Input validation helpers shared by the estimators."""

from __future__ import annotations

import numpy as np
from sklearn.utils import check_array

PROB_SUM_TOL = 1e-3


def check_probs(probs) -> np.ndarray:
    """Validate a ``(T, 2)`` probability series; rows may deviate from 1 by ``PROB_SUM_TOL``."""
    probs = np.asarray(probs, dtype=np.float64)
    if probs.ndim != 2 or probs.shape[1] != 2:
        raise ValueError(f"probabilities must have shape (T, 2), got {probs.shape}")
    if probs.size and not np.all(np.isfinite(probs)):
        raise ValueError("probabilities contain non-finite values")
    if probs.size and (probs.min() < 0.0 or probs.max() > 1.0):
        raise ValueError("probabilities must lie in [0, 1]")
    if probs.size and np.max(np.abs(probs.sum(axis=1) - 1.0)) > PROB_SUM_TOL:
        raise ValueError(f"probability rows must sum to 1 within {PROB_SUM_TOL}")
    return probs


def check_features(X, n_features: int | None = None, dtype=np.float64) -> np.ndarray:
    X = check_array(X, dtype=dtype)
    if n_features is not None and X.shape[1] != n_features:
        raise ValueError(f"expected {n_features} features, got {X.shape[1]}")
    return X


def check_phase_labels(y) -> np.ndarray:
    """Map phase labels {1, 2} to class indices {0, 1}."""
    y = np.asarray(y).reshape(-1)
    if y.size and not np.all(np.isin(y, (1, 2))):
        raise ValueError("phase labels must be 1 (intubation) or 2 (withdrawal)")
    return y.astype(np.int64) - 1


def check_sequences(X, y=None, n_features: int | None = None):
    """Validate a list of ``(T_i, D)`` sequences and optional per-frame labels."""
    if isinstance(X, np.ndarray) and X.ndim == 2:
        X = [X]
        if y is not None:
            y = [y]
    seqs = [check_features(x, n_features, dtype=np.float64) for x in X]
    if not seqs:
        raise ValueError("no sequences given")
    dims = {s.shape[1] for s in seqs}
    if len(dims) != 1:
        raise ValueError(f"sequences disagree on feature dimension: {sorted(dims)}")
    if y is None:
        return seqs
    labels = [check_phase_labels(l) for l in y]
    if len(labels) != len(seqs):
        raise ValueError("one label sequence is required per input sequence")
    for s, l in zip(seqs, labels):
        if len(s) != len(l):
            raise ValueError(f"sequence of length {len(s)} has {len(l)} labels")
    return seqs, labels
