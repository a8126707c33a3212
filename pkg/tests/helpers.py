"""Shared constructions for the test suite."""

import numpy as np
from scipy.ndimage import gaussian_filter


def smooth_texture(rng, shape=(64, 64), sigma=1.5):
    """Periodic band-limited noise scaled to the full 8-bit range."""
    t = gaussian_filter(rng.random(shape), sigma, mode="wrap")
    t = (t - t.min()) / (t.max() - t.min())
    return (t * 255).astype(np.uint8)


def smooth_field(rng, n=256, cutoff=6):
    """Random band-limited vector field on an n x n grid, a sum of low-frequency sinusoids."""
    ys, xs = np.mgrid[0:n, 0:n] / n
    field = np.zeros((n, n, 2))
    for c in range(2):
        for _ in range(8):
            kx, ky = rng.integers(-cutoff, cutoff + 1, 2)
            a, ph = rng.normal(), rng.uniform(0, 2 * np.pi)
            field[..., c] += a * np.sin(2 * np.pi * (kx * xs + ky * ys) + ph)
        field[..., c] += np.tensordot(rng.normal(size=3), np.stack([np.ones_like(xs), xs, ys]), axes=1)
    return field


def expanding_field(rng, n=256, cutoff=6):
    """Radial expansion or contraction about a random center plus a band-limited perturbation.

    The net divergence of a zero-mean random field can cancel to nearly zero,
    where any relative comparison of two quadratures is ill-conditioned; the
    radial part keeps it away from zero the way camera motion does.
    """
    ys, xs = np.mgrid[0:n, 0:n].astype(np.float64)
    s = rng.choice([-1.0, 1.0]) * rng.uniform(0.01, 0.02)
    cx, cy = rng.uniform(0.3 * n, 0.7 * n, 2)
    return smooth_field(rng, n, cutoff) + s * np.stack([xs - cx, ys - cy], axis=-1)


# acceptance outcomes, printed in the terminal summary by conftest
ACCEPTANCE: dict = {}


def record(number: int, ok: bool, detail: str) -> None:
    line = f"criterion {number}: {'PASS' if ok else 'FAIL'} ({detail})"
    ACCEPTANCE[number] = line
    print(line)
