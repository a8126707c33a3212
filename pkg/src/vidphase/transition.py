"""Optimal two-phase split of a per-frame probability series."""

from __future__ import annotations

from typing import NamedTuple

import numpy as np
from sklearn.base import BaseEstimator

from ._validation import check_probs


class Transition(NamedTuple):
    frame: int
    seconds: float
    score: float


def partition_score(probs, t: int) -> float:
    """Score of splitting before frame ``t``: phase-1 mass before plus phase-2 mass from ``t`` on."""
    probs = check_probs(probs)
    n = len(probs)
    if not 0 <= t <= n:
        raise ValueError(f"split {t} outside [0, {n}]")
    return float(probs[:t, 0].sum() + probs[t:, 1].sum())


def partition_scores(probs) -> np.ndarray:
    """All ``T + 1`` partition scores via ``L(t+1) = L(t) + p1(t) - p2(t)``."""
    probs = check_probs(probs)
    out = np.empty(len(probs) + 1)
    out[0] = probs[:, 1].sum()
    np.cumsum(probs[:, 0] - probs[:, 1], out=out[1:])
    out[1:] += out[0]
    return out


def detect_transition(probs, fps: float = 30.0) -> Transition:
    """Earliest maximizer of the partition score.

    Parameters
    ----------
    probs : array-like, shape (T, 2)
        Per-frame probabilities of intubation and withdrawal. Near-normalized
        rows are accepted as-is.
    fps : float
        Frame rate used to express the transition in seconds.
    """
    probs = check_probs(probs)
    if len(probs) == 0:
        raise ValueError("cannot detect a transition in an empty series")
    scores = partition_scores(probs)
    t = int(np.argmax(scores))
    return Transition(t, t / fps, float(scores[t]))


class TransitionDetector(BaseEstimator):
    """Stateless estimator wrapper so the detector can close a pipeline.

    ``predict`` takes a list of ``(T_i, 2)`` probability series and returns
    the transition frame of each.
    """

    def __init__(self, fps: float = 30.0):
        self.fps = fps

    def fit(self, X=None, y=None):
        return self

    def predict(self, X):
        return np.array([detect_transition(p, self.fps).frame for p in X], dtype=np.int64)

    def detect(self, probs) -> Transition:
        return detect_transition(probs, self.fps)
