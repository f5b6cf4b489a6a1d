"""Greedy nearest-neighbour tracker used as a comparison baseline.

Uses 3D detections only. Each track runs a constant-velocity Kalman filter
on its ground-plane centre; the other box fields are copied from the last
matched detection. Matching is greedy by centre distance within a fixed gate,
and the confirm/delete rules mirror the main tracker.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .estimation import CameraModel, project_means
from .geometry import Box2D, Box3D
from .tracker import FrameBundle, TrackOutput, TrackStatus


@dataclass
class BaselineParams:
    gate: float = 1.5  # metres
    n_init: int = 3
    n_term: int = 5
    q: float = 0.05
    r: float = 0.01
    init_vel_var: float = 1.0
    dt: float = 0.1


@dataclass
class _Track:
    id: int
    x: np.ndarray  # (x, z, vx, vz)
    P: np.ndarray
    box: Box3D
    status: TrackStatus = TrackStatus.TENTATIVE
    hits: int = 1
    misses: int = 0


class GreedyTracker:
    def __init__(self, params: Optional[BaselineParams] = None, camera: Optional[CameraModel] = None):
        self.params = params or BaselineParams()
        self.camera = camera
        self.tracks: list[_Track] = []
        self._next = 1
        self._last_t: Optional[float] = None

    def _dt(self, frame: FrameBundle) -> float:
        if frame.timestamp is None or self._last_t is None:
            dt = self.params.dt
        else:
            dt = max(frame.timestamp - self._last_t, 1e-6)
        self._last_t = frame.timestamp
        return dt

    def step(self, frame: FrameBundle) -> list[TrackOutput]:
        p = self.params
        dt = self._dt(frame)
        F = np.eye(4)
        F[0, 2] = F[1, 3] = dt
        H = np.eye(2, 4)
        for t in self.tracks:
            t.x = F @ t.x
            t.P = F @ t.P @ F.T + p.q * np.eye(4)
        dets = [d.box for d in frame.detections_3d]
        pairs = []
        for i, t in enumerate(self.tracks):
            for j, b in enumerate(dets):
                d = float(np.hypot(t.x[0] - b.x, t.x[1] - b.z))
                if d <= p.gate:
                    pairs.append((d, i, j))
        pairs.sort()
        used_t, used_d = set(), set()
        for _, i, j in pairs:
            if i in used_t or j in used_d:
                continue
            used_t.add(i)
            used_d.add(j)
            t, b = self.tracks[i], dets[j]
            S = H @ t.P @ H.T + p.r * np.eye(2)
            K = t.P @ H.T @ np.linalg.inv(S)
            t.x = t.x + K @ (np.array([b.x, b.z]) - H @ t.x)
            t.P = (np.eye(4) - K @ H) @ t.P
            t.box = b
            t.hits += 1
            t.misses = 0
            if t.status is TrackStatus.TENTATIVE and t.hits >= p.n_init:
                t.status = TrackStatus.CONFIRMED
        for i, t in enumerate(self.tracks):
            if i not in used_t:
                t.hits = 0
                t.misses += 1
                if t.misses >= p.n_term:
                    t.status = TrackStatus.DEAD
        self.tracks = [t for t in self.tracks if t.status is not TrackStatus.DEAD]
        for j, b in enumerate(dets):
            if j not in used_d:
                P0 = np.diag([p.r, p.r, p.init_vel_var, p.init_vel_var])
                status = TrackStatus.CONFIRMED if p.n_init <= 1 else TrackStatus.TENTATIVE
                self.tracks.append(_Track(self._next, np.array([b.x, b.z, 0.0, 0.0]), P0, b, status))
                self._next += 1
        return self._outputs(frame)

    def _outputs(self, frame: FrameBundle) -> list[TrackOutput]:
        out = []
        for t in self.tracks:
            if t.status is not TrackStatus.CONFIRMED:
                continue
            b = t.box
            box = Box3D(float(t.x[0]), b.y, float(t.x[1]), b.l, b.w, b.h, b.theta)
            box2d = None
            cam = frame.camera or self.camera
            if cam is not None:
                img, depth = project_means(np.array([box.x, box.y, box.z, box.l, box.h, box.w, box.theta, 0, 0]), cam)
                if depth > 0 and img[2] > 0 and img[3] > 0:
                    box2d = Box2D.from_array(img)
            out.append(TrackOutput(frame.frame_index, t.id, box, box2d, t.status))
        return out


def run_baseline(
    frames: Sequence[FrameBundle], params: Optional[BaselineParams] = None, camera: Optional[CameraModel] = None
) -> list[list[TrackOutput]]:
    trk = GreedyTracker(params, camera)
    return [trk.step(f) for f in frames]
