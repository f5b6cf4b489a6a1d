"""Synthetic pedestrian scenes with known ground truth.

Targets walk on a ground plane in front of a single pinhole camera placed at
the origin of the tracking frame. Each frame yields noisy paired 2D/3D
detections, some 2D-only detections, Poisson clutter and appearance
features that are stable per identity.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import InvalidConfig
from .estimation import STATE_DIM, CameraModel, NoiseConfig, project_means, transition_matrix
from .geometry import Box2D, Box3D
from .metrics import Annotation
from .tracker import Detection2D, Detection3D, FrameBundle


def default_camera() -> CameraModel:
    return CameraModel(fx=720.0, fy=720.0, cx=640.0, cy=360.0)


@dataclass
class TurnSegment:
    target: int
    start_frame: int
    end_frame: int
    rate: float  # rad/s


@dataclass
class ScenarioConfig:
    num_targets: int = 5
    num_frames: int = 200
    frame_rate: float = 10.0
    seed: int = 0
    x_range: tuple[float, float] = (-20.0, 20.0)
    z_range: tuple[float, float] = (5.0, 45.0)
    ground_y: float = -1.2
    max_speed: float = 1.5
    min_speed: float = 0.3
    crossing_pairs: int = 0
    turns: list[TurnSegment] = field(default_factory=list)
    p_d: float = 0.9
    clutter_rate: float = 1.0
    two_d_only_fraction: float = 0.0
    sigma_pos: float = 0.1
    sigma_size: float = 0.05
    sigma_theta: float = 0.1
    sigma_px: float = 3.0
    feature_dim: int = 16
    feature_noise: float = 0.2
    feature_separation: float = 0.5
    size_range_lw: tuple[float, float] = (0.5, 0.8)
    size_range_h: tuple[float, float] = (1.5, 1.9)
    camera: CameraModel = field(default_factory=default_camera)

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        def bad(msg):
            raise InvalidConfig(msg)

        if self.num_targets < 0:
            bad("num_targets must be non-negative")
        if self.num_frames < 1:
            bad("num_frames must be at least 1")
        if self.frame_rate <= 0:
            bad("frame_rate must be positive")
        if self.x_range[0] >= self.x_range[1] or self.z_range[0] >= self.z_range[1]:
            bad("scene ranges must be increasing")
        if self.z_range[0] <= 1.0:
            bad("scene must start more than 1 m in front of the camera")
        if not 0 < self.p_d <= 1:
            bad("p_d must lie in (0, 1]")
        if self.clutter_rate < 0:
            bad("clutter_rate must be non-negative")
        if not 0 <= self.two_d_only_fraction <= 1:
            bad("two_d_only_fraction must lie in [0, 1]")
        for name in ("sigma_pos", "sigma_size", "sigma_theta", "sigma_px", "feature_noise"):
            if getattr(self, name) < 0:
                bad(f"{name} must be non-negative")
        if not 0 < self.min_speed <= self.max_speed:
            bad("need 0 < min_speed <= max_speed")
        if 2 * self.crossing_pairs > self.num_targets:
            bad("crossing_pairs needs two targets per pair")
        if self.feature_dim < 1:
            bad("feature_dim must be positive")
        for t in self.turns:
            if not 0 <= t.target < self.num_targets:
                bad(f"turn references unknown target {t.target}")
            if t.start_frame > t.end_frame:
                bad("turn segment ends before it starts")

    @property
    def dt(self) -> float:
        return 1.0 / self.frame_rate

    def matched_noise(self, **overrides) -> NoiseConfig:
        """Measurement noise and clutter settings that match this scenario."""
        floor = 1e-4
        r3 = np.array([self.sigma_pos] * 3 + [self.sigma_size] * 3 + [self.sigma_theta]) ** 2
        kw = dict(
            r3=np.maximum(r3, floor),
            r2=np.full(4, max(self.sigma_px**2, floor)),
            p_d=min(max(self.p_d, 1e-3), 1.0),
            clutter=max(self.clutter_rate, 1e-3),
        )
        kw.update(overrides)
        return NoiseConfig(**kw)


@dataclass
class Scenario:
    ground_truth: list[list[Annotation]]
    frames: list[FrameBundle]
    truth_states: np.ndarray  # (frames, targets, 9), NaN when absent
    config: ScenarioConfig


def _unit(v):
    return v / np.linalg.norm(v, axis=-1, keepdims=True)


def _identity_features(rng, n, dim, min_angle):
    out = []
    for _ in range(n):
        for _attempt in range(1000):
            f = _unit(rng.normal(size=dim))
            if all(math.acos(min(1.0, float(f @ g))) >= min_angle for g in out):
                break
        out.append(f)
    return np.array(out).reshape(n, dim)


def _perturb(rng, base, sigma):
    if sigma == 0:
        return base.copy()
    return _unit(base + sigma * rng.normal(size=base.shape) / math.sqrt(base.shape[-1]))


def _inside(cfg, p):
    return cfg.x_range[0] <= p[0] <= cfg.x_range[1] and cfg.z_range[0] <= p[1] <= cfg.z_range[1]


def _trajectories(cfg: ScenarioConfig, rng) -> np.ndarray:
    """Ground-plane positions and velocities, shape ``(frames, targets, 4)`` as (x, z, vx, vz)."""
    T, n, dt = cfg.num_frames, cfg.num_targets, cfg.dt
    duration = max((T - 1) * dt, dt)
    lo = np.array([cfg.x_range[0], cfg.z_range[0]])
    hi = np.array([cfg.x_range[1], cfg.z_range[1]])
    margin = 1.0
    start = np.empty((n, 2))
    vel = np.empty((n, 2))
    centre = 0.5 * (lo + hi)
    k = 0
    for _ in range(cfg.crossing_pairs):
        # two targets meet at a common point at a common time
        meet = centre + rng.uniform(-0.15, 0.15, 2) * (hi - lo)
        t_c = rng.uniform(0.35, 0.65) * duration
        base = rng.uniform(-math.pi, math.pi)
        for heading in (base, base + rng.uniform(math.pi / 3, 2 * math.pi / 3)):
            d = np.array([math.cos(heading), math.sin(heading)])
            speed = rng.uniform(cfg.min_speed, cfg.max_speed)
            while speed > 1e-3 and not (
                _inside(cfg, meet - d * speed * t_c) and _inside(cfg, meet + d * speed * (duration - t_c))
            ):
                speed *= 0.9
            start[k] = meet - d * speed * t_c
            vel[k] = d * speed
            k += 1
    for i in range(k, n):
        a = rng.uniform(lo + margin, hi - margin)
        b = rng.uniform(lo + margin, hi - margin)
        v = (b - a) / duration
        speed = float(np.linalg.norm(v))
        if speed > cfg.max_speed:
            v *= cfg.max_speed / speed
        elif speed < cfg.min_speed:
            v *= cfg.min_speed / max(speed, 1e-9)
            while not _inside(cfg, a + v * duration) and np.linalg.norm(v) > 1e-3:
                v *= 0.9
        start[i] = a
        vel[i] = v
    out = np.empty((T, n, 4))
    pos = start.copy()
    v = vel.copy()
    turns = {i: [t for t in cfg.turns if t.target == i] for i in range(n)}
    for f in range(T):
        out[f, :, :2] = pos
        out[f, :, 2:] = v
        for i in range(n):
            rate = sum(t.rate for t in turns[i] if t.start_frame <= f < t.end_frame)
            if rate:
                c, s = math.cos(rate * dt), math.sin(rate * dt)
                v[i] = [c * v[i, 0] - s * v[i, 1], s * v[i, 0] + c * v[i, 1]]
        pos = pos + v * dt
    return out


def _heading(vx, vz):
    return math.atan2(vz, vx)


def _state_of(box: Box3D, vx: float, vz: float) -> np.ndarray:
    return np.array([box.x, box.y, box.z, box.l, box.h, box.w, box.theta, vx, vz])


def _project(box: Box3D, cam: CameraModel) -> Optional[np.ndarray]:
    img, depth = project_means(_state_of(box, 0.0, 0.0), cam)
    return img if depth > 0.1 else None


def _noisy_2d(rng, img, sigma):
    u, v, w, h = img + sigma * rng.normal(size=4)
    return Box2D(u, v, max(w, 1.0), max(h, 1.0))


def _noisy_3d(rng, box: Box3D, cfg):
    p = rng.normal(size=7)
    return Box3D(
        box.x + cfg.sigma_pos * p[0],
        box.y + cfg.sigma_pos * p[1],
        box.z + cfg.sigma_pos * p[2],
        max(box.l + cfg.sigma_size * p[3], 0.05),
        max(box.w + cfg.sigma_size * p[4], 0.05),
        max(box.h + cfg.sigma_size * p[5], 0.05),
        box.theta + cfg.sigma_theta * p[6],
    )


def generate(config: ScenarioConfig) -> Scenario:
    """Simulate a scenario; the same config and seed always give the same output."""
    cfg = config
    cfg.validate()
    rng = np.random.default_rng(cfg.seed)
    n = cfg.num_targets
    sizes = np.column_stack([
        rng.uniform(*cfg.size_range_lw, n),
        rng.uniform(*cfg.size_range_lw, n),
        rng.uniform(*cfg.size_range_h, n),
    ])
    f2d = _identity_features(rng, n, cfg.feature_dim, cfg.feature_separation)
    f3d = _identity_features(rng, n, cfg.feature_dim, cfg.feature_separation)
    traj = _trajectories(cfg, rng)
    cam = cfg.camera
    gt_frames, frames = [], []
    truth = np.full((cfg.num_frames, n, STATE_DIM), np.nan)
    for f in range(cfg.num_frames):
        gts = []
        raw = []  # (box3d or None, box2d, feat2d, feat3d)
        for i in range(n):
            x, z, vx, vz = traj[f, i]
            l, w, h = sizes[i]
            box = Box3D(x, cfg.ground_y, z, l, w, h, _heading(vx, vz))
            img = _project(box, cam)
            if img is None:
                continue
            truth[f, i] = _state_of(box, vx, vz)
            gts.append(Annotation(i + 1, Box2D.from_array(img), box))
            if rng.random() >= cfg.p_d:
                continue
            b2 = _noisy_2d(rng, img, cfg.sigma_px)
            b3 = None if rng.random() < cfg.two_d_only_fraction else _noisy_3d(rng, box, cfg)
            raw.append((b3, b2, _perturb(rng, f2d[i], cfg.feature_noise),
                        _perturb(rng, f3d[i], cfg.feature_noise)))
        for _ in range(rng.poisson(cfg.clutter_rate)):
            box = Box3D(
                rng.uniform(*cfg.x_range), cfg.ground_y, rng.uniform(*cfg.z_range),
                rng.uniform(*cfg.size_range_lw), rng.uniform(*cfg.size_range_lw),
                rng.uniform(*cfg.size_range_h), rng.uniform(-math.pi, math.pi),
            )
            img = _project(box, cam)
            if img is None:
                continue
            b3 = None if rng.random() < cfg.two_d_only_fraction else box
            raw.append((b3, _noisy_2d(rng, img, cfg.sigma_px),
                        _unit(rng.normal(size=cfg.feature_dim)), _unit(rng.normal(size=cfg.feature_dim))))
        d2, d3 = [], []
        for j, k in enumerate(rng.permutation(len(raw))):
            b3, b2, g2, g3 = raw[k]
            d2.append(Detection2D(j, b2, g2))
            if b3 is not None:
                d3.append(Detection3D(j, b3, j, g3))
        gt_frames.append(gts)
        frames.append(FrameBundle(f, f * cfg.dt, d2, d3, cam))
    return Scenario(gt_frames, frames, truth, cfg)


def linear_gaussian_run(
    noise: NoiseConfig,
    steps: int,
    dt: float = 0.1,
    seed: int = 0,
    initial: Optional[np.ndarray] = None,
) -> tuple[np.ndarray, np.ndarray]:
    """One target whose motion and 3D measurements follow the filter's own model.

    The initial velocity is drawn with the filter's initial velocity variance
    and each step adds process noise with covariance ``diag(q3)``. Returns
    ``(truth (steps, 9), measurements (steps, 7))``.
    """
    rng = np.random.default_rng(seed)
    x = np.array([0.0, -1.2, 15.0, 1.0, 1.7, 1.0, 0.0, 0.0, 0.0]) if initial is None else np.array(initial, float)
    x[7:] = rng.normal(0.0, math.sqrt(noise.init_vel_var), 2)
    F = transition_matrix(dt)
    truth = np.empty((steps, STATE_DIM))
    meas = np.empty((steps, 7))
    sq, sr = np.sqrt(noise.q3), np.sqrt(noise.r3)
    for k in range(steps):
        if k:
            x = F @ x + sq * rng.normal(size=STATE_DIM)
        truth[k] = x
        meas[k] = x[:7] + sr * rng.normal(size=7)
    return truth, meas
