"""Motion-direction measure from optical flow and the cumulative boundary estimate.

Forward camera motion along the lumen expands the flow field and backward
motion contracts it. The expansion over a rectangle ``D`` is measured as the
outward flux of the flow through the rectangle's boundary, which equals the
integral of the divergence over ``D`` but avoids differentiating noisy flow.
Summing the per-pair measure over time gives a travelled-"distance" curve
whose global maximum marks the turn from intubation to withdrawal.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from scipy.ndimage import median_filter

INTUBATION = 1
WITHDRAWAL = 2


class Region(NamedTuple):
    """Axis-aligned rectangle with integer pixel-center corners ``(x0, y0)``-``(x1, y1)``."""

    x0: int
    y0: int
    x1: int
    y1: int

    @property
    def area(self) -> float:
        return float((self.x1 - self.x0) * (self.y1 - self.y0))

    def check(self, shape) -> None:
        height, width = shape[:2]
        if self.x1 - self.x0 < 8 or self.y1 - self.y0 < 8:
            raise ValueError(f"region {tuple(self)} is smaller than 8 px on a side")
        if self.x0 < 1 or self.y0 < 1 or self.x1 > width - 2 or self.y1 > height - 2:
            raise ValueError(
                f"region {tuple(self)} must keep a 1 px margin inside a {width}x{height} field"
            )


def centered_region(shape, fraction: float = 0.8) -> Region:
    """Centered rectangle spanning ``fraction`` of each dimension, with a 1 px margin."""
    if not 0.0 < fraction <= 1.0:
        raise ValueError(f"region fraction must lie in (0, 1], got {fraction}")
    height, width = shape[:2]
    spans = []
    for n in (width, height):
        span = min(int(round(fraction * (n - 1))), n - 3)
        start = (n - 1 - span) // 2
        spans.append((start, start + span))
    (x0, x1), (y0, y1) = spans
    region = Region(x0, y0, x1, y1)
    region.check(shape)
    return region


@dataclass(frozen=True)
class MotionParams:
    region_fraction: float = 0.8
    median_width: int = 1

    def __post_init__(self):
        if not 0.0 < self.region_fraction <= 1.0:
            raise ValueError("region_fraction must lie in (0, 1]")
        if self.median_width < 1 or self.median_width % 2 == 0:
            raise ValueError("median_width must be a positive odd integer")


def _trapezoid(samples: np.ndarray) -> float:
    # unit spacing, endpoints weighted by one half
    return float(samples.sum() - 0.5 * (samples[0] + samples[-1]))


def boundary_flux(flow: np.ndarray, region: Region) -> float:
    """Outward flux of ``flow`` through the boundary of ``region``.

    The line integral is evaluated by trapezoid quadrature along the four
    edges, sampling the field at pixel centers. Opposite edges are
    differenced sample-by-sample before summing, so a constant field yields
    exactly zero.

    Parameters
    ----------
    flow : ndarray, shape (H, W, 2)
        Displacement ``(u, v)`` per pixel.
    region : Region
        Rectangle inside the field with at least a 1 px margin.

    Returns
    -------
    float
        Flux in px^2/frame; positive for expansion.
    """
    flow = np.asarray(flow)
    region.check(flow.shape)
    x0, y0, x1, y1 = region
    u = flow[..., 0].astype(np.float64, copy=False)
    v = flow[..., 1].astype(np.float64, copy=False)
    horizontal = v[y1, x0 : x1 + 1] - v[y0, x0 : x1 + 1]
    vertical = u[y0 : y1 + 1, x1] - u[y0 : y1 + 1, x0]
    return _trapezoid(horizontal) + _trapezoid(vertical)


def divergence_sum(flow: np.ndarray, region: Region) -> float:
    """Area integral of the central-difference divergence over ``region``.

    The rectangle is integrated with 2-D trapezoid weights (interior 1,
    edges 1/2, corners 1/4) so the weights total the region area. This is
    the brute-force counterpart of :func:`boundary_flux`.
    """
    flow = np.asarray(flow)
    region.check(flow.shape)
    x0, y0, x1, y1 = region
    u = flow[..., 0].astype(np.float64, copy=False)
    v = flow[..., 1].astype(np.float64, copy=False)
    ys = slice(y0, y1 + 1)
    xs = slice(x0, x1 + 1)
    du_dx = 0.5 * (u[ys, x0 + 1 : x1 + 2] - u[ys, x0 - 1 : x1])
    dv_dy = 0.5 * (v[y0 + 1 : y1 + 2, xs] - v[y0 - 1 : y1, xs])
    wx = np.ones(x1 - x0 + 1)
    wx[[0, -1]] = 0.5
    wy = np.ones(y1 - y0 + 1)
    wy[[0, -1]] = 0.5
    return float(wy @ (du_dx + dv_dy) @ wx)


def direction_measure(flow: np.ndarray, params: MotionParams = MotionParams()) -> float:
    """Area-normalized boundary flux; positive = forward, negative = backward."""
    region = centered_region(np.shape(flow), params.region_fraction)
    return boundary_flux(flow, region) / region.area


def direction_series(flows, params: MotionParams = MotionParams()) -> np.ndarray:
    """Direction measure for each flow field, optionally median filtered in time."""
    d = np.array([direction_measure(f, params) for f in flows], dtype=np.float64)
    return smooth_direction(d, params.median_width)


def smooth_direction(d: np.ndarray, width: int = 1) -> np.ndarray:
    d = np.asarray(d, dtype=np.float64)
    if width == 1 or len(d) == 0:
        return d
    return median_filter(d, size=width, mode="nearest")


def cumulative_signal(d) -> np.ndarray:
    """Prefix sums ``S`` with ``S[0] = 0`` and ``S[t] = sum(d[:t])``, length ``N + 1``."""
    d = np.asarray(d, dtype=np.float64).reshape(-1)
    out = np.zeros(len(d) + 1)
    np.cumsum(d, out=out[1:])
    return out


def boundary_estimate(cumulative) -> int:
    """Index of the global maximum of the cumulative signal, earliest on ties."""
    cumulative = np.asarray(cumulative, dtype=np.float64)
    if cumulative.size == 0:
        raise ValueError("empty cumulative signal")
    return int(np.argmax(cumulative))


def weak_labels(total_frames: int, boundary: int) -> np.ndarray:
    """Frames before ``boundary`` are intubation (1), the rest withdrawal (2)."""
    if not 0 <= boundary <= total_frames:
        raise ValueError(f"boundary {boundary} outside [0, {total_frames}]")
    labels = np.full(total_frames, WITHDRAWAL, dtype=np.int64)
    labels[:boundary] = INTUBATION
    return labels
