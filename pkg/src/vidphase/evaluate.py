"""Transition-time error metrics, evaluation reports and SVG plots."""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

METHOD_DESCRIPTIONS = {
    "a": "motion analysis baseline (cumulative direction boundary)",
    "b": "TCN on motion direction",
    "c": "TCN on raw normalized features (generic-feature surrogate)",
    "d": "TCN on classifier embeddings",
    "e": "TCN on classifier embeddings and motion direction",
}

REPORT_NOTE = (
    "Method c stands in for a TCN on generic pretrained image features: it runs on the "
    "normalized hand-crafted descriptors that the frame classifier is trained on, so the "
    "c versus d contrast isolates generic against task-tuned features. Errors are in minutes."
)


def absolute_errors(pred, truth) -> np.ndarray:
    pred = np.asarray(pred, dtype=np.float64)
    truth = np.asarray(truth, dtype=np.float64)
    if pred.shape != truth.shape or pred.ndim != 1:
        raise ValueError("pred and truth must be 1-d arrays of equal length")
    return np.abs(pred - truth)


def median(values) -> float:
    """Exact median; the mean of the two middle values for even counts."""
    v = np.sort(np.asarray(values, dtype=np.float64))
    n = len(v)
    if n == 0:
        raise ValueError("median of an empty list")
    mid = n // 2
    return float(v[mid]) if n % 2 else float((v[mid - 1] + v[mid]) / 2.0)


def mae_medae(pred, truth) -> tuple[float, float]:
    """Mean and median absolute error.

    Examples
    --------
    >>> mae, medae = mae_medae([10, 12, 20], [11, 12, 16])
    >>> round(mae, 4), medae
    (1.6667, 1.0)
    """
    err = absolute_errors(pred, truth)
    if err.size == 0:
        raise ValueError("no videos to evaluate")
    return float(err.mean()), median(err)


def frames_to_minutes(frames, fps: float) -> np.ndarray:
    return np.asarray(frames, dtype=np.float64) / (fps * 60.0)


@dataclass
class EvalReport:
    method: str
    videos: list
    predicted_frames: list
    annotated_frames: list
    fps: float
    config_hash: str
    seed: int
    description: str = field(default="")

    def __post_init__(self):
        if not (len(self.videos) == len(self.predicted_frames) == len(self.annotated_frames)):
            raise ValueError("videos, predictions and annotations must align")
        if not self.description:
            self.description = METHOD_DESCRIPTIONS.get(self.method, self.method)

    @property
    def predicted_minutes(self) -> np.ndarray:
        return frames_to_minutes(self.predicted_frames, self.fps)

    @property
    def annotated_minutes(self) -> np.ndarray:
        return frames_to_minutes(self.annotated_frames, self.fps)

    @property
    def errors(self) -> np.ndarray:
        return absolute_errors(self.predicted_minutes, self.annotated_minutes)

    @property
    def mae(self) -> float:
        return mae_medae(self.predicted_minutes, self.annotated_minutes)[0]

    @property
    def medae(self) -> float:
        return mae_medae(self.predicted_minutes, self.annotated_minutes)[1]

    def to_dict(self) -> dict:
        rows = [
            {
                "video": v,
                "predicted_frame": int(p),
                "annotated_frame": int(a),
                "predicted_minutes": float(pm),
                "annotated_minutes": float(am),
                "abs_error_minutes": float(e),
            }
            for v, p, a, pm, am, e in zip(self.videos, self.predicted_frames, self.annotated_frames,
                                          self.predicted_minutes, self.annotated_minutes, self.errors)
        ]
        return {
            "method": self.method,
            "description": self.description,
            "n_videos": len(self.videos),
            "mae_minutes": self.mae,
            "medae_minutes": self.medae,
            "config_hash": self.config_hash,
            "seed": self.seed,
            "fps": self.fps,
            "videos": rows,
        }


CSV_COLUMNS = ("method", "description", "n_videos", "mae_minutes", "medae_minutes", "config_hash", "seed")


def reports_to_csv(reports) -> str:
    lines = [f"# {REPORT_NOTE}", ",".join(CSV_COLUMNS)]
    for r in reports:
        lines.append(",".join([r.method, f'"{r.description}"', str(len(r.videos)), repr(r.mae),
                               repr(r.medae), r.config_hash, str(r.seed)]))
    return "\n".join(lines) + "\n"


def reports_to_json(reports) -> str:
    return json.dumps({"note": REPORT_NOTE, "methods": [r.to_dict() for r in reports]}, indent=2) + "\n"


def cumulative_svg(signal, boundary: int | None = None, truth: int | None = None,
                   width: int = 640, height: int = 240, title: str = "") -> str:
    """Standalone SVG line plot of a cumulative motion signal.

    The estimated boundary is drawn as a dashed red line and the annotated
    transition as a dashed green line.
    """
    s = np.asarray(signal, dtype=np.float64)
    if s.ndim != 1 or len(s) < 2:
        raise ValueError("signal must be 1-d with at least two samples")
    pad = 30
    lo, hi = float(s.min()), float(s.max())
    span = hi - lo if hi > lo else 1.0
    xs = pad + (width - 2 * pad) * np.arange(len(s)) / (len(s) - 1)
    ys = height - pad - (height - 2 * pad) * (s - lo) / span
    points = " ".join(f"{x:.2f},{y:.2f}" for x, y in zip(xs, ys))

    def vline(t, color):
        x = pad + (width - 2 * pad) * t / (len(s) - 1)
        return (f'<line x1="{x:.2f}" y1="{pad}" x2="{x:.2f}" y2="{height - pad}" '
                f'stroke="{color}" stroke-dasharray="4 3"/>')

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}">',
        f'<rect width="{width}" height="{height}" fill="white"/>',
        f'<text x="{pad}" y="{pad - 10}" font-family="sans-serif" font-size="12">{title}</text>',
        f'<polyline fill="none" stroke="black" stroke-width="1" points="{points}"/>',
    ]
    if boundary is not None:
        parts.append(vline(boundary, "red"))
    if truth is not None:
        parts.append(vline(truth, "green"))
    parts.append("</svg>")
    return "\n".join(parts) + "\n"
