import numpy as np
import pytest

from helpers import smooth_texture
from vidphase import dataio, flow
from vidphase.flow import FlowParams


def central(field, frac=0.8):
    h, w = field.shape[:2]
    my, mx = int(round(h * (1 - frac) / 2)), int(round(w * (1 - frac) / 2))
    return field[my : h - my, mx : w - mx]


def test_pyramid_level_sizes():
    pyr = flow.build_pyramid(np.zeros((64, 64), np.uint8), FlowParams(levels=4))
    assert [im.shape[-1] for im in pyr.images] == [8, 16, 32, 64]
    assert len(pyr) == 4


def test_constant_frame_has_zero_gradients():
    pyr = flow.build_pyramid(np.full((64, 64), 77, np.uint8))
    for gx, gy in zip(pyr.grad_x, pyr.grad_y):
        assert not gx.any() and not gy.any()


def test_ramp_gradients():
    ramp = np.tile(np.arange(64, dtype=np.float32), (64, 1))
    pyr = flow.build_pyramid(ramp, FlowParams(levels=1))
    np.testing.assert_allclose(pyr.grad_x[0][0, 1:-1, 1:-1], 1.0, atol=1e-6)
    np.testing.assert_allclose(pyr.grad_y[0], 0.0, atol=1e-6)


def test_frame_too_small_for_levels():
    with pytest.raises(ValueError, match="too small"):
        flow.build_pyramid(np.zeros((32, 32), np.uint8), FlowParams(levels=4, patch_size=8))


def test_param_validation():
    with pytest.raises(ValueError):
        FlowParams(levels=0)
    with pytest.raises(ValueError):
        FlowParams(stride=9, patch_size=8)
    with pytest.raises(ValueError):
        FlowParams(temperature=0.0)


def test_identity_pair():
    rng = np.random.default_rng(0)
    for _ in range(5):
        img = smooth_texture(rng)
        f = flow.estimate_flow_pair(img, img)
        assert np.abs(f).max() <= 0.05


def test_shift_3_0():
    rng = np.random.default_rng(1)
    f1 = smooth_texture(rng)
    f = central(flow.estimate_flow_pair(f1, np.roll(f1, 3, axis=1)))
    assert 2.7 <= f[..., 0].mean() <= 3.3
    assert -0.3 <= f[..., 1].mean() <= 0.3


@pytest.mark.parametrize("dx, dy", [(8, 0), (-8, 5), (0, -7), (8, 8)])
def test_large_shift(dx, dy):
    rng = np.random.default_rng(2)
    f1 = smooth_texture(rng)
    f = central(flow.estimate_flow_pair(f1, np.roll(f1, (dy, dx), axis=(0, 1))))
    assert np.hypot(f[..., 0] - dx, f[..., 1] - dy).mean() <= 0.5


def test_dimension_mismatch():
    with pytest.raises(ValueError, match="mismatch"):
        flow.estimate_flow_pair(np.zeros((64, 64), np.uint8), np.zeros((64, 72), np.uint8))


def test_flat_frames_keep_zero_initialization():
    flat = np.full((64, 64), 128, np.uint8)
    assert not flow.estimate_flow_pair(flat, flat).any()


def test_rgb_input():
    rng = np.random.default_rng(3)
    g = smooth_texture(rng)
    rgb = np.repeat(g[..., None], 3, axis=2)
    f = central(flow.estimate_flow_pair(rgb, np.roll(rgb, 2, axis=1)))
    assert np.hypot(f[..., 0] - 2, f[..., 1]).mean() <= 0.5


def test_sequence_is_deterministic_and_thread_independent(tmp_path):
    rng = np.random.default_rng(4)
    base = smooth_texture(rng)
    frames = np.stack([np.roll(base, k, axis=1) for k in range(7)])
    a = flow.estimate_flow_frames(frames, threads=1, chunk=2)
    b = flow.estimate_flow_frames(frames, threads=3, chunk=2)
    c = flow.estimate_flow_frames(frames, threads=1, chunk=64)
    np.testing.assert_array_equal(a, b)
    np.testing.assert_array_equal(a, c)
    assert a.shape == (6, 64, 64, 2)
    for i, fr in enumerate(frames):
        dataio.store_frame(fr, tmp_path / f"frame_{i:06d}.pgm")
    np.testing.assert_array_equal(flow.estimate_flow_sequence(tmp_path), a)
    assert np.abs(central(a)[..., 0] - 1).mean() < 0.1


def test_sequence_needs_two_frames():
    with pytest.raises(ValueError):
        flow.estimate_flow_frames(np.zeros((1, 64, 64), np.uint8))
