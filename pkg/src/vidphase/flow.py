"""Coarse-to-fine patch-based inverse-search optical flow.

Each level of a box-filtered pyramid is tiled with overlapping square
patches. A patch's translation is refined by inverse-compositional
Gauss-Newton (the template Jacobian and its normal matrix are computed once
on the first frame), initialized from the flow of the coarser level.
Patch displacements are then blended into a dense field, weighting each
patch by its photometric fit. There is no variational refinement stage.

All routines operate on a batch of frame pairs at once to amortize numpy
overhead; :func:`estimate_flow_pair` is the single-pair convenience.
"""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from numba import njit

from . import dataio

logger = logging.getLogger(__name__)

ILL_CONDITIONED_DET = 1e-6


@dataclass(frozen=True)
class FlowParams:
    levels: int = 4
    patch_size: int = 8
    stride: int = 4
    iterations: int = 8
    min_update: float = 0.01
    temperature: float = 0.01
    search_radius: int = 1
    refine_radius: int = 0

    def __post_init__(self):
        if self.levels < 1:
            raise ValueError("levels must be >= 1")
        if self.patch_size < 4:
            raise ValueError("patch_size must be >= 4")
        if not 1 <= self.stride <= self.patch_size:
            raise ValueError("stride must lie in [1, patch_size]")
        if self.iterations < 1:
            raise ValueError("iterations must be >= 1")
        if self.temperature <= 0:
            raise ValueError("temperature must be positive")


@dataclass
class Pyramid:
    """Images and central-difference gradients, coarsest level first.

    Arrays have shape ``(B, h, w)`` so a pyramid may hold a batch of frames.
    """

    images: list
    grad_x: list
    grad_y: list

    def __len__(self):
        return len(self.images)


def to_gray(frame: np.ndarray) -> np.ndarray:
    """Gray float32 in [0, 1]; RGB frames are converted with Rec. 601 luma."""
    frame = np.asarray(frame)
    if frame.ndim >= 3 and frame.shape[-1] == 3:
        frame = frame @ np.array([0.299, 0.587, 0.114])
    return (frame / 255.0).astype(np.float32)


def _downsample(img: np.ndarray) -> np.ndarray:
    h, w = img.shape[-2:]
    if h % 2:
        img = np.concatenate([img, img[..., -1:, :]], axis=-2)
    if w % 2:
        img = np.concatenate([img, img[..., :, -1:]], axis=-1)
    return 0.25 * (img[..., 0::2, 0::2] + img[..., 1::2, 0::2] + img[..., 0::2, 1::2] + img[..., 1::2, 1::2])


def _gradients(img: np.ndarray):
    gy, gx = np.gradient(img, axis=(-2, -1))
    return gx.astype(np.float32), gy.astype(np.float32)


def build_pyramid(frame: np.ndarray, params: FlowParams = FlowParams()) -> Pyramid:
    """Pyramid of a gray ``(H, W)`` frame or a ``(B, H, W)`` batch.

    Raises
    ------
    ValueError
        If the frame is smaller than ``2**(levels-1) * patch_size`` in either
        dimension.
    """
    frame = np.asarray(frame)
    if frame.dtype == np.uint8:
        frame = to_gray(frame)
    img = frame.astype(np.float32)
    if img.ndim == 2:
        img = img[None]
    need = 2 ** (params.levels - 1) * params.patch_size
    h, w = img.shape[-2:]
    if h < need or w < need:
        raise ValueError(
            f"frame {w}x{h} too small for {params.levels} levels of {params.patch_size} px patches "
            f"(needs {need}x{need})"
        )
    images = [img]
    for _ in range(params.levels - 1):
        images.append(_downsample(images[-1]))
    images.reverse()
    grads = [_gradients(i) for i in images]
    return Pyramid(images, [g[0] for g in grads], [g[1] for g in grads])


def _patch_origins(n: int, patch: int, stride: int) -> np.ndarray:
    origins = list(range(0, n - patch + 1, stride))
    if origins[-1] != n - patch:
        origins.append(n - patch)
    return np.array(origins)


@njit(cache=True)
def _sample(img, h, w, x, y):
    # caller guarantees 0 <= x <= w-1 and 0 <= y <= h-1
    x0 = min(int(x), w - 2) if w > 1 else 0
    y0 = min(int(y), h - 2) if h > 1 else 0
    fx = x - x0
    fy = y - y0
    x1 = min(x0 + 1, w - 1)
    y1 = min(y0 + 1, h - 1)
    top = img[y0, x0] * (1.0 - fx) + img[y0, x1] * fx
    bot = img[y1, x0] * (1.0 - fx) + img[y1, x1] * fx
    return top * (1.0 - fy) + bot * fy


@njit(cache=True)
def _residual(img, T, Gx, Gy, x0, y0, pu, pv, buf):
    """Steepest-descent products, SSD and valid count of one patch at displacement (pu, pv).

    Both the template and the warped samples are mean-normalized over the
    valid pixels. Samples falling outside the second frame carry no
    information and are skipped.
    """
    h, w = img.shape
    P = T.shape[0]
    n = 0
    s_warp = 0.0
    s_tmpl = 0.0
    for dy in range(P):
        ys = y0 + dy + pv
        for dx in range(P):
            xs = x0 + dx + pu
            if ys < 0.0 or ys > h - 1 or xs < 0.0 or xs > w - 1:
                buf[dy, dx] = np.nan
                continue
            val = _sample(img, h, w, xs, ys)
            buf[dy, dx] = val
            s_warp += val
            s_tmpl += T[dy, dx]
            n += 1
    bx = 0.0
    by = 0.0
    ssd = 0.0
    if n == 0:
        return bx, by, ssd, n
    offset = (s_warp - s_tmpl) / n
    for dy in range(P):
        for dx in range(P):
            val = buf[dy, dx]
            if np.isnan(val):
                continue
            r = val - T[dy, dx] - offset
            bx += Gx[dy, dx] * r
            by += Gy[dy, dx] * r
            ssd += r * r
    return bx, by, ssd, n


@njit(cache=True)
def _level_kernel(I1, gx, gy, I2, init, ox, oy, P, iterations, min_update, temperature, det_min, radius):
    B, h, w = I1.shape
    acc = np.zeros((B, h, w, 2))
    wsum = np.zeros((B, h, w))
    T = np.empty((P, P))
    Gx = np.empty((P, P))
    Gy = np.empty((P, P))
    buf = np.empty((P, P))
    lim_x = w / 2.0
    lim_y = h / 2.0
    min_valid = (P * P) // 2
    npx = P * P
    for b in range(B):
        img = I2[b]
        for j in range(oy.shape[0]):
            y0 = oy[j]
            for i in range(ox.shape[0]):
                x0 = ox[i]
                pu = 0.0
                pv = 0.0
                mx = 0.0
                my = 0.0
                for dy in range(P):
                    for dx in range(P):
                        T[dy, dx] = I1[b, y0 + dy, x0 + dx]
                        Gx[dy, dx] = gx[b, y0 + dy, x0 + dx]
                        Gy[dy, dx] = gy[b, y0 + dy, x0 + dx]
                        mx += Gx[dy, dx]
                        my += Gy[dy, dx]
                        pu += init[b, y0 + dy, x0 + dx, 0]
                        pv += init[b, y0 + dy, x0 + dx, 1]
                pu /= npx
                pv /= npx
                mx /= npx
                my /= npx
                # zero-mean gradients: Jacobian of the mean-normalized template
                hxx = 0.0
                hxy = 0.0
                hyy = 0.0
                for dy in range(P):
                    for dx in range(P):
                        Gx[dy, dx] -= mx
                        Gy[dy, dx] -= my
                        hxx += Gx[dy, dx] * Gx[dy, dx]
                        hxy += Gx[dy, dx] * Gy[dy, dx]
                        hyy += Gy[dy, dx] * Gy[dy, dx]
                det = hxx * hyy - hxy * hxy
                if radius > 0 and det >= det_min:
                    # exhaustive integer search around the initialization; ties keep it
                    cu = np.floor(pu + 0.5)
                    cv = np.floor(pv + 0.5)
                    _, _, ssd, n = _residual(img, T, Gx, Gy, x0, y0, cu, cv, buf)
                    best = ssd / n if n >= min_valid else np.inf
                    for sy in range(-radius, radius + 1):
                        for sx in range(-radius, radius + 1):
                            _, _, ssd, n = _residual(img, T, Gx, Gy, x0, y0, cu + sx, cv + sy, buf)
                            if n >= min_valid and ssd / n < best:
                                best = ssd / n
                                pu = cu + sx
                                pv = cv + sy
                if det >= det_min:
                    for _ in range(iterations):
                        bx, by, _, n = _residual(img, T, Gx, Gy, x0, y0, pu, pv, buf)
                        if n < min_valid:
                            break
                        du = (hyy * bx - hxy * by) / det
                        dv = (hxx * by - hxy * bx) / det
                        pu = min(max(pu - du, -lim_x), lim_x)
                        pv = min(max(pv - dv, -lim_y), lim_y)
                        if du * du + dv * dv < min_update * min_update:
                            break
                _, _, ssd, n = _residual(img, T, Gx, Gy, x0, y0, pu, pv, buf)
                if n > 0:
                    weight = 1.0 / (1.0 + ssd / n / temperature)
                else:
                    weight = 1e-6
                for dy in range(P):
                    for dx in range(P):
                        acc[b, y0 + dy, x0 + dx, 0] += weight * pu
                        acc[b, y0 + dy, x0 + dx, 1] += weight * pv
                        wsum[b, y0 + dy, x0 + dx] += weight
    for b in range(B):
        for y in range(h):
            for x in range(w):
                acc[b, y, x, 0] /= wsum[b, y, x]
                acc[b, y, x, 1] /= wsum[b, y, x]
    return acc


def _level_flow(I1, gx, gy, I2, init, params: FlowParams, radius: int = 0):
    """Refine patch translations on one level and densify; ``init`` is ``(B, h, w, 2)``."""
    _, h, w = I1.shape
    P = min(params.patch_size, h, w)
    ox = _patch_origins(w, P, params.stride)
    oy = _patch_origins(h, P, params.stride)
    return _level_kernel(
        I1.astype(np.float64), gx.astype(np.float64), gy.astype(np.float64), I2.astype(np.float64),
        np.ascontiguousarray(init, dtype=np.float64), ox, oy, P, params.iterations,
        params.min_update, params.temperature, ILL_CONDITIONED_DET, radius,
    )


def _upsample_flow(flow: np.ndarray, shape) -> np.ndarray:
    h, w = shape
    up = np.repeat(np.repeat(flow, 2, axis=1), 2, axis=2)[:, :h, :w] * 2.0
    return up


def estimate_flow_batch(f1: np.ndarray, f2: np.ndarray, params: FlowParams = FlowParams()) -> np.ndarray:
    """Flow from each frame of ``f1`` to the matching frame of ``f2``; returns ``(B, H, W, 2)``."""
    f1 = np.asarray(f1)
    f2 = np.asarray(f2)
    if f1.shape != f2.shape:
        raise ValueError(f"frame dimension mismatch: {f1.shape} vs {f2.shape}")
    g1 = to_gray(f1) if f1.dtype == np.uint8 else np.asarray(f1, dtype=np.float32)
    g2 = to_gray(f2) if f2.dtype == np.uint8 else np.asarray(f2, dtype=np.float32)
    if g1.ndim == 2:
        g1, g2 = g1[None], g2[None]
    pyr1 = build_pyramid(g1, params)
    pyr2 = build_pyramid(g2, params)
    B = g1.shape[0]
    h, w = pyr1.images[0].shape[-2:]
    flow = np.zeros((B, h, w, 2))
    for level in range(len(pyr1)):
        shape = pyr1.images[level].shape[-2:]
        if level > 0:
            flow = _upsample_flow(flow, shape)
        flow = _level_flow(
            pyr1.images[level], pyr1.grad_x[level], pyr1.grad_y[level],
            pyr2.images[level], flow, params, params.search_radius if level == 0 else params.refine_radius,
        )
    H, W = g1.shape[-2:]
    flow[..., 0] = np.clip(flow[..., 0], -W / 2.0, W / 2.0)
    flow[..., 1] = np.clip(flow[..., 1], -H / 2.0, H / 2.0)
    return flow.astype(np.float32)


def estimate_flow_pair(f1: np.ndarray, f2: np.ndarray, params: FlowParams = FlowParams()) -> np.ndarray:
    """Dense ``(H, W, 2)`` flow from ``f1`` to ``f2``.

    Examples
    --------
    >>> rng = np.random.default_rng(0)
    >>> img = (rng.random((64, 64)) * 255).astype(np.uint8)
    >>> float(np.abs(estimate_flow_pair(img, img)).max())
    0.0
    """
    f1 = np.asarray(f1)
    f2 = np.asarray(f2)
    if f1.shape != f2.shape:
        raise ValueError(f"frame dimension mismatch: {f1.shape} vs {f2.shape}")
    if f1.dtype == np.uint8:
        f1, f2 = to_gray(f1), to_gray(f2)
    return estimate_flow_batch(f1[None], f2[None], params)[0]


def estimate_flow_frames(frames: np.ndarray, params: FlowParams = FlowParams(), threads: int = 1,
                         chunk: int = 64) -> np.ndarray:
    """Flow for every consecutive pair of a ``(T, H, W[, 3])`` frame stack, ``(T-1, H, W, 2)``.

    Pairs are grouped into chunks processed independently, so the result does
    not depend on ``threads``.
    """
    frames = np.asarray(frames)
    if len(frames) < 2:
        raise ValueError("at least two frames are needed")
    gray = to_gray(frames) if frames.dtype == np.uint8 else frames.astype(np.float32)
    n = len(gray) - 1
    starts = range(0, n, chunk)

    def work(s):
        e = min(s + chunk, n)
        return estimate_flow_batch(gray[s:e], gray[s + 1 : e + 1], params)

    if threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            parts = list(pool.map(work, starts))
    else:
        parts = [work(s) for s in starts]
    return np.concatenate(parts)


def estimate_flow_sequence(frame_dir, params: FlowParams = FlowParams(), threads: int = 1) -> np.ndarray:
    """Read ``frame_%06d`` files from a directory and estimate flow for consecutive pairs."""
    frames = dataio.load_frames(Path(frame_dir))
    return estimate_flow_frames(frames, params, threads)
