"""Synthetic endoscopy-like videos with known phase schedules.

A procedural tunnel stands in for the colon: the camera travels along the
tunnel axis with a per-frame velocity drawn from a two-regime schedule
(forward during intubation, slowly backward during withdrawal). Two outputs
are produced from the same schedule: rendered gray frames, and ideal radial
flow fields corrupted by measurement noise. The schedule guarantees that the
prefix sums of the true velocity peak uniquely at the transition frame, so
any boundary error downstream comes from measurement, not from the truth.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import dataio
from .motion import INTUBATION, WITHDRAWAL

# independent random streams per video
_SCHEDULE, _TRACK, _RENDER, _FLOW = range(4)


@dataclass(frozen=True)
class PhaseAppearance:
    brightness: float
    lumen_radius: float  # fraction of the frame's shorter side
    texture_scale: float
    wall_contact_prob: float  # per-frame probability that a contact episode starts


@dataclass(frozen=True)
class SynthConfig:
    width: int = 64
    height: int = 64
    total_frames: int = 1200
    transition_fraction: float = 0.4
    n_videos: int = 50
    seed: int = 0

    # schedule, velocities in px/frame (positive = into the tunnel)
    intubation_velocity: float = 1.0
    intubation_jitter: float = 0.25
    withdrawal_velocity: float = -0.5
    withdrawal_jitter: float = 0.15
    intubation_pause_prob: float = 0.004
    withdrawal_pause_prob: float = 0.01
    intubation_slip_prob: float = 0.01
    withdrawal_slip_prob: float = 0.006
    pause_length: tuple = (5, 40)
    slip_length: tuple = (3, 20)
    slip_speed: float = 0.8
    turnaround_frames: int = 150
    turnaround_speed: float = 0.8
    episode_length: tuple = (5, 25)

    # appearance
    intubation: PhaseAppearance = PhaseAppearance(0.55, 0.10, 1.0, 0.010)
    withdrawal: PhaseAppearance = PhaseAppearance(0.65, 0.16, 1.3, 0.002)
    contact_length: tuple = (5, 20)
    frame_noise: float = 4.0
    foe_jitter: float = 4.0

    # flow measurement noise
    flow_noise: float = 0.5
    outlier_fraction: float = 0.1
    outlier_magnitude: float = 5.0
    deform_std: float = 0.3  # spurious expansion, in velocity units
    deform_corr: float = 0.99

    write_flow: bool = False

    def __post_init__(self):
        if not 0.0 < self.transition_fraction < 1.0:
            raise ValueError(f"transition_fraction must lie in (0, 1), got {self.transition_fraction}")
        if self.total_frames < 100:
            raise ValueError("total_frames must be at least 100")
        if self.width < 8 or self.height < 8:
            raise ValueError("frames must be at least 8x8")
        probs = [
            self.intubation_pause_prob,
            self.withdrawal_pause_prob,
            self.intubation_slip_prob,
            self.withdrawal_slip_prob,
            self.outlier_fraction,
            self.intubation.wall_contact_prob,
            self.withdrawal.wall_contact_prob,
        ]
        if any(not 0.0 <= p <= 1.0 for p in probs):
            raise ValueError("probabilities must lie in [0, 1]")
        if not 0.0 <= self.deform_corr < 1.0:
            raise ValueError("deform_corr must lie in [0, 1)")
        if self.intubation_velocity <= 0 or self.withdrawal_velocity >= 0:
            raise ValueError("intubation velocity must be positive and withdrawal negative")
        for name in ("pause_length", "slip_length", "episode_length", "contact_length"):
            lo, hi = getattr(self, name)
            if not 1 <= lo <= hi:
                raise ValueError(f"{name} must satisfy 1 <= lo <= hi")

    @property
    def transition_frame(self) -> int:
        return int(round(self.transition_fraction * self.total_frames))

    def replace(self, **changes) -> "SynthConfig":
        return dataclasses.replace(self, **changes)


@dataclass
class GroundTruth:
    transition_frame: int
    phase: np.ndarray
    velocity: np.ndarray

    def __post_init__(self):
        self.phase = np.asarray(self.phase, dtype=np.int64)
        self.velocity = np.asarray(self.velocity, dtype=np.float64)


@dataclass
class MotionSchedule:
    """Per-frame axial velocity; ``velocity[t]`` moves the camera from frame t to t+1."""

    velocity: np.ndarray
    transition_frame: int
    center: np.ndarray = field(repr=False)  # (T, 2) lumen / focus-of-expansion track, px

    @property
    def total_frames(self) -> int:
        return len(self.velocity)

    @property
    def position(self) -> np.ndarray:
        """Camera position before each frame, i.e. prefix sums of the velocity, length T+1."""
        out = np.zeros(len(self.velocity) + 1)
        np.cumsum(self.velocity, out=out[1:])
        return out


def video_rng(seed: int, video: int, stream: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(video, stream)))


def _episode(rng, phase_mean, jitter, cfg, pause_prob, slip_prob, near_turn):
    """Draw one velocity episode; returns the velocity array."""
    if near_turn:
        n = int(rng.integers(cfg.episode_length[0], cfg.episode_length[1] + 1))
        sign = 1.0 if rng.random() < 0.5 else -1.0
        return sign * cfg.turnaround_speed + jitter * rng.standard_normal(n)
    u = rng.random()
    if u < pause_prob:
        n = int(rng.integers(cfg.pause_length[0], cfg.pause_length[1] + 1))
        return np.zeros(n)
    if u < pause_prob + slip_prob:
        n = int(rng.integers(cfg.slip_length[0], cfg.slip_length[1] + 1))
        return -np.sign(phase_mean) * cfg.slip_speed * abs(phase_mean) + jitter * rng.standard_normal(n)
    return phase_mean + jitter * rng.standard_normal(1)


def _build_phase(rng, length, sign, phase_mean, jitter, cfg, pause_prob, slip_prob):
    """Velocities moving away from the transition whose running sum keeps ``sign`` strictly.

    Phase 1 is built backward from the transition (suffix sums must stay
    positive), phase 2 forward (prefix sums must stay negative). Any episode
    that would break the constraint is redrawn.
    """
    out = np.empty(length)
    pos = 0
    running = 0.0
    while pos < length:
        near_turn = pos < cfg.turnaround_frames
        for attempt in range(50):
            ep = _episode(rng, phase_mean, jitter, cfg, pause_prob, slip_prob, near_turn)[: length - pos]
            sums = running + np.cumsum(ep)
            if np.all(sign * sums > 0):
                break
        else:
            # guaranteed-valid fallback: a single frame at the phase mean
            ep = np.array([phase_mean])
            sums = running + ep
        out[pos : pos + len(ep)] = ep
        running = float(sums[-1])
        pos += len(ep)
    return out


def _center_track(rng, cfg: SynthConfig) -> np.ndarray:
    n = cfg.total_frames
    rho = 0.995
    steps = rng.standard_normal((n, 2)) * cfg.foe_jitter * np.sqrt(1 - rho**2)
    track = np.empty((n, 2))
    track[0] = rng.standard_normal(2) * cfg.foe_jitter
    for t in range(1, n):
        track[t] = rho * track[t - 1] + steps[t]
    center = np.array([(cfg.width - 1) / 2.0, (cfg.height - 1) / 2.0])
    return center + track


def make_schedule(config: SynthConfig, video: int = 0) -> tuple[MotionSchedule, GroundTruth]:
    """Draw the velocity schedule and ground truth for one video.

    Examples
    --------
    >>> sched, truth = make_schedule(SynthConfig(total_frames=1200, transition_fraction=0.4))
    >>> truth.transition_frame
    480
    """
    cfg = config
    rng = video_rng(cfg.seed, video, _SCHEDULE)
    tr = cfg.transition_frame
    n = cfg.total_frames
    phase1 = _build_phase(
        rng, tr, +1, cfg.intubation_velocity, cfg.intubation_jitter, cfg,
        cfg.intubation_pause_prob, cfg.intubation_slip_prob,
    )[::-1]
    phase2 = _build_phase(
        rng, n - tr, -1, cfg.withdrawal_velocity, cfg.withdrawal_jitter, cfg,
        cfg.withdrawal_pause_prob, cfg.withdrawal_slip_prob,
    )
    velocity = np.concatenate([phase1, phase2])
    center = _center_track(video_rng(cfg.seed, video, _TRACK), cfg)
    schedule = MotionSchedule(velocity, tr, center)
    phase = np.where(np.arange(n) < tr, INTUBATION, WITHDRAWAL)
    return schedule, GroundTruth(tr, phase, velocity.copy())


def flow_gain(config: SynthConfig) -> float:
    """Radial scale per unit velocity: flow at half the shorter side equals the velocity."""
    return 2.0 / min(config.width, config.height)


def _deformation(rng, n, cfg: SynthConfig) -> np.ndarray:
    rho = cfg.deform_corr
    eps = rng.standard_normal(n) * cfg.deform_std * np.sqrt(1 - rho**2)
    d = np.empty(n)
    d[0] = rng.standard_normal() * cfg.deform_std
    for t in range(1, n):
        d[t] = rho * d[t - 1] + eps[t]
    return d


def iter_flow_fields(schedule: MotionSchedule, config: SynthConfig, video: int = 0):
    """Yield the ``T - 1`` noisy radial flow fields of a schedule, one per frame pair.

    Field ``i`` is ``s_i (p - c_i)`` with ``s_i`` proportional to
    ``velocity[i]`` and ``c_i`` the focus of expansion, plus a temporally
    correlated spurious expansion about a random center, Gaussian noise and
    a fraction of uniformly random outlier vectors.
    """
    cfg = config
    if schedule.total_frames != cfg.total_frames:
        raise ValueError("schedule and config disagree on total_frames")
    rng = video_rng(cfg.seed, video, _FLOW)
    gain = flow_gain(cfg)
    n_pairs = cfg.total_frames - 1
    deform = _deformation(rng, n_pairs, cfg) if cfg.deform_std > 0 else np.zeros(n_pairs)
    ys, xs = np.mgrid[0 : cfg.height, 0 : cfg.width].astype(np.float64)
    n_px = cfg.height * cfg.width
    for i in range(n_pairs):
        cx, cy = schedule.center[i]
        s = gain * schedule.velocity[i]
        u = s * (xs - cx)
        v = s * (ys - cy)
        if deform[i] != 0.0:
            dx, dy = rng.uniform(0, cfg.width - 1), rng.uniform(0, cfg.height - 1)
            u += gain * deform[i] * (xs - dx)
            v += gain * deform[i] * (ys - dy)
        if cfg.flow_noise > 0:
            u += cfg.flow_noise * rng.standard_normal(u.shape)
            v += cfg.flow_noise * rng.standard_normal(v.shape)
        if cfg.outlier_fraction > 0:
            mask = rng.random(n_px) < cfg.outlier_fraction
            k = int(mask.sum())
            vals = rng.uniform(-cfg.outlier_magnitude, cfg.outlier_magnitude, (k, 2))
            u.reshape(-1)[mask] = vals[:, 0]
            v.reshape(-1)[mask] = vals[:, 1]
        yield np.stack([u, v], axis=-1).astype(np.float32)


def synth_flow_fields(schedule: MotionSchedule, config: SynthConfig, video: int = 0) -> list:
    return list(iter_flow_fields(schedule, config, video))


# ----------------------------------------------------------------------------
# rendering

_FOCAL_RADIUS = 1.0  # tunnel radius x focal length, in units of (min side / 2)^2
_FOG_DEPTH = 64.0


def _episodes_mask(rng, n, start_prob, length) -> np.ndarray:
    mask = np.zeros(n, dtype=bool)
    t = 0
    while t < n:
        if rng.random() < start_prob:
            k = int(rng.integers(length[0], length[1] + 1))
            mask[t : t + k] = True
            t += k
        else:
            t += 1
    return mask


def _smooth_field(rng, h, w, scale=8.0) -> np.ndarray:
    """Low-frequency random field in roughly [-1, 1] from a few random sinusoids."""
    ys, xs = np.mgrid[0:h, 0:w].astype(np.float64)
    out = np.zeros((h, w))
    for _ in range(4):
        kx, ky = rng.normal(0, 1.0 / scale, 2)
        out += np.cos(2 * np.pi * (kx * xs + ky * ys) + rng.uniform(0, 2 * np.pi))
    return out / 2.0


def render_frames(schedule: MotionSchedule, config: SynthConfig, video: int = 0):
    """Render the gray frames of one video.

    Returns
    -------
    frames : ndarray of uint8, shape (T, H, W)
    contact : ndarray of bool, shape (T,)
        Frames rendered as wall contact (near-uniform, blurred, bright).
    """
    cfg = config
    rng = video_rng(cfg.seed, video, _RENDER)
    n, h, w = cfg.total_frames, cfg.height, cfg.width
    tr = schedule.transition_frame
    half = min(h, w) / 2.0
    focal = _FOCAL_RADIUS * half * half
    position = schedule.position[:-1]

    contact = np.concatenate([
        _episodes_mask(rng, tr, cfg.intubation.wall_contact_prob, cfg.contact_length),
        _episodes_mask(rng, n - tr, cfg.withdrawal.wall_contact_prob, cfg.contact_length),
    ])
    # per-video texture: rings of mixed wavelengths with angular modulation
    n_comp = 6
    wavelengths = rng.uniform(5.0, 20.0, n_comp)
    harmonics = rng.integers(0, 5, n_comp)
    phases = rng.uniform(0, 2 * np.pi, n_comp)
    amps = rng.uniform(0.5, 1.0, n_comp)
    amps /= amps.sum()
    # slowly varying per-frame lumen radius and brightness wobble
    radius_wobble = 1.0 + 0.15 * np.sin(2 * np.pi * np.arange(n) / rng.uniform(80, 200) + rng.uniform(0, 6.3))
    bright_wobble = 0.03 * rng.standard_normal(n)
    contact_base = _smooth_field(rng, h, w, scale=24.0)

    ys, xs = np.mgrid[0:h, 0:w].astype(np.float64)
    frames = np.empty((n, h, w), dtype=np.uint8)
    for t in range(n):
        app = cfg.intubation if t < tr else cfg.withdrawal
        if contact[t]:
            img = 0.85 + 0.05 * contact_base * np.cos(0.05 * t) + 0.02 * (app.brightness - 0.6)
            img = 255.0 * img + cfg.frame_noise * 0.5 * rng.standard_normal((h, w))
        else:
            cx, cy = schedule.center[t]
            dx, dy = xs - cx, ys - cy
            r = np.hypot(dx, dy) + 1e-3
            theta = np.arctan2(dy, dx)
            depth = focal / r
            world = position[t] + depth
            tex = np.zeros_like(r)
            for lam, m, ph, a in zip(wavelengths, harmonics, phases, amps):
                tex += a * np.sin(2 * np.pi * world / (lam * app.texture_scale) + m * theta + ph)
            fog = np.exp(-depth / _FOG_DEPTH)
            lumen = app.lumen_radius * radius_wobble[t] * 2 * half
            illum = (app.brightness + bright_wobble[t]) * (1.0 - np.exp(-((r / lumen) ** 2)))
            img = 255.0 * illum * (0.75 + 0.25 * fog * tex)
            img = img + cfg.frame_noise * rng.standard_normal((h, w))
        frames[t] = np.clip(np.rint(img), 0, 255).astype(np.uint8)
    return frames, contact


# ----------------------------------------------------------------------------
# corpus


def write_truth(truth: GroundTruth, directory) -> None:
    directory = Path(directory)
    lines = ["frame,phase,velocity"]
    lines += [f"{t},{p},{v!r}" for t, (p, v) in enumerate(zip(truth.phase.tolist(), truth.velocity.tolist()))]
    (directory / "truth.csv").write_text("\n".join(lines) + "\n", encoding="utf-8")
    (directory / "truth.json").write_text(
        json.dumps({"transition_frame": int(truth.transition_frame)}) + "\n", encoding="utf-8"
    )


def read_truth(directory) -> GroundTruth:
    directory = Path(directory)
    meta = json.loads((directory / "truth.json").read_text(encoding="utf-8"))
    rows = (directory / "truth.csv").read_text(encoding="utf-8").splitlines()[1:]
    phase = [int(r.split(",")[1]) for r in rows if r]
    velocity = [float(r.split(",")[2]) for r in rows if r]
    return GroundTruth(int(meta["transition_frame"]), phase, velocity)


def video_name(video: int) -> str:
    return f"video_{video:03d}"


def write_video(config: SynthConfig, video: int, out_dir) -> Path:
    """Generate one video into ``out_dir/video_XXX``; returns that directory."""
    vdir = Path(out_dir) / video_name(video)
    fdir = vdir / "frames"
    fdir.mkdir(parents=True, exist_ok=True)
    schedule, truth = make_schedule(config, video)
    frames, _ = render_frames(schedule, config, video)
    for t, img in enumerate(frames):
        dataio.store_frame(img, fdir / f"frame_{t:06d}.pgm")
    if config.write_flow:
        flow_dir = vdir / "flow"
        flow_dir.mkdir(exist_ok=True)
        for i, f in enumerate(iter_flow_fields(schedule, config, video)):
            dataio.store_flow(f, flow_dir / f"flow_{i:06d}.flo")
    write_truth(truth, vdir)
    return vdir
