import numpy as np
import pytest

from vidphase import dataio, features, motion, synth
from vidphase.synth import SynthConfig


def quiet(**kw):
    """A noiseless, jitter-free configuration."""
    base = dict(
        total_frames=200, intubation_jitter=0.0, withdrawal_jitter=0.0, intubation_pause_prob=0.0,
        withdrawal_pause_prob=0.0, intubation_slip_prob=0.0, withdrawal_slip_prob=0.0,
        turnaround_frames=0, flow_noise=0.0, outlier_fraction=0.0, deform_std=0.0, foe_jitter=0.0,
    )
    base.update(kw)
    return SynthConfig(**base)


def test_transition_frame():
    assert SynthConfig(total_frames=1200, transition_fraction=0.4).transition_frame == 480


@pytest.mark.parametrize("fraction", [0.0, 1.0, -0.2, 1.5])
def test_invalid_transition_fraction(fraction):
    with pytest.raises(ValueError):
        SynthConfig(transition_fraction=fraction)


def test_other_config_errors():
    with pytest.raises(ValueError):
        SynthConfig(intubation_velocity=-1.0)
    with pytest.raises(ValueError):
        SynthConfig(pause_length=(5, 2))
    with pytest.raises(ValueError):
        SynthConfig(outlier_fraction=1.5)


def test_zero_jitter_closed_form():
    cfg = quiet(total_frames=1200, withdrawal_velocity=-1.0)
    schedule, truth = synth.make_schedule(cfg)
    t = np.arange(1201)
    np.testing.assert_allclose(schedule.position, np.minimum(t, 480) - np.maximum(0, t - 480))
    assert np.argmax(schedule.position) == 480 == truth.transition_frame


def test_default_schedule_peaks_at_transition():
    schedule, truth = synth.make_schedule(SynthConfig(seed=0), 0)
    pos = schedule.position
    best = max(range(len(pos)), key=lambda t: (pos[t], -t))
    assert best == 480 == truth.transition_frame


def test_prefix_sum_peak_is_unique_for_every_video():
    cfg = SynthConfig(n_videos=20, seed=3)
    for video in range(cfg.n_videos):
        schedule, truth = synth.make_schedule(cfg, video)
        pos = schedule.position
        tr = truth.transition_frame
        assert np.all(np.delete(pos, tr) < pos[tr])


def test_truth_phases():
    _, truth = synth.make_schedule(SynthConfig(total_frames=300))
    assert truth.phase[:120].tolist() == [1] * 120
    assert truth.phase[120:].tolist() == [2] * 180


def test_noiseless_flow_is_exact_radial():
    cfg = quiet(total_frames=100, intubation_velocity=1.0)
    schedule, _ = synth.make_schedule(cfg)
    flow = next(synth.iter_flow_fields(schedule, cfg))
    s = synth.flow_gain(cfg)
    ys, xs = np.mgrid[0:64, 0:64]
    np.testing.assert_allclose(flow[..., 0], s * (xs - 31.5), atol=1e-6)
    np.testing.assert_allclose(flow[..., 1], s * (ys - 31.5), atol=1e-6)
    assert motion.direction_measure(flow) == pytest.approx(2 * s, rel=1e-6)


def test_zero_velocity_gives_zero_field():
    cfg = quiet(total_frames=100)
    schedule, _ = synth.make_schedule(cfg)
    schedule.velocity[:] = 0.0
    assert all(not np.any(f) for f in synth.iter_flow_fields(schedule, cfg))


def test_noisy_flow_sign_agreement():
    cfg = SynthConfig(flow_noise=0.5, outlier_fraction=0.1, seed=0, total_frames=600)
    schedule, _ = synth.make_schedule(cfg)
    d = motion.direction_series(synth.iter_flow_fields(schedule, cfg))
    v = schedule.velocity[:-1]
    moving = v != 0
    agree = np.mean(np.sign(d[moving]) == np.sign(v[moving]))
    assert agree >= 0.9


def test_flow_determinism():
    cfg = SynthConfig(total_frames=120)
    s1, _ = synth.make_schedule(cfg, 2)
    s2, _ = synth.make_schedule(cfg, 2)
    for a, b in zip(synth.iter_flow_fields(s1, cfg, 2), synth.iter_flow_fields(s2, cfg, 2)):
        np.testing.assert_array_equal(a, b)


def test_videos_differ():
    cfg = SynthConfig(total_frames=120)
    a, _ = synth.make_schedule(cfg, 0)
    b, _ = synth.make_schedule(cfg, 1)
    assert not np.array_equal(a.velocity, b.velocity)


def test_wall_contact_frames():
    cfg = SynthConfig(total_frames=600, seed=1)
    schedule, _ = synth.make_schedule(cfg)
    frames, contact = synth.render_frames(schedule, cfg)
    assert contact.any() and not contact.all()
    f = features.extract_video_features(frames)
    assert f[contact, 18].max() < 0.01  # dark fraction
    assert f[contact, 20].mean() < f[~contact, 20].mean()  # gradient energy


def test_phase_two_is_brighter():
    cfg = SynthConfig(seed=0)
    schedule, truth = synth.make_schedule(cfg)
    frames, _ = synth.render_frames(schedule, cfg)
    tr = truth.transition_frame
    assert frames[tr:].mean() > frames[:tr].mean()


def test_written_video_is_byte_identical(tmp_path):
    cfg = SynthConfig(total_frames=100, write_flow=True)
    a = synth.write_video(cfg, 0, tmp_path / "a")
    b = synth.write_video(cfg, 0, tmp_path / "b")
    files = sorted(p.relative_to(a) for p in a.rglob("*") if p.is_file())
    assert len(files) == 100 + 99 + 2
    for rel in files:
        assert (a / rel).read_bytes() == (b / rel).read_bytes()
    truth = synth.read_truth(a)
    assert truth.transition_frame == 40
    assert dataio.load_frames(a / "frames").shape == (100, 64, 64)
    assert dataio.load_flow(a / "flow" / "flow_000000.flo").shape == (64, 64, 2)
