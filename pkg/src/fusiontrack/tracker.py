"""Per-frame tracking: prediction, two-step JPDA association, dual update, track management."""
from __future__ import annotations

import enum
import logging
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from . import association as assoc
from .association import AssociationParams, CostMatrix
from .errors import DimensionMismatch, NonMonotonicTimestamp
from .estimation import (
    MEAS2D_DIM,
    MEAS3D_DIM,
    MIN_DEPTH,
    THETA,
    BoxMeasurement2D,
    CameraModel,
    NoiseConfig,
    TrackState2D,
    TrackState3D,
    box2d_center_form,
    H3,
    box3d_measurement,
    check_betas,
    finish_3d_batch,
    init_state,
    init_state_2d,
    init_state_from_ray,
    pda_batch,
    predict_2d,
    project_means,
    projection_jacobian,
    transition_matrix,
    update_2d_only_mode,
)
from .geometry import Box2D, Box3D

log = logging.getLogger(__name__)


class TrackStatus(enum.Enum):
    TENTATIVE = "tentative"
    CONFIRMED = "confirmed"
    DEAD = "dead"


class Mode(enum.Enum):
    MODE_3D = "3d"
    MODE_2D_ONLY = "2d"


@dataclass
class Detection2D:
    det_id: int
    box: Box2D
    feature: Optional[np.ndarray] = None
    score: float = 1.0
    label: str = "Pedestrian"


@dataclass
class Detection3D:
    """A 3D box found inside the frustum of the 2D detection ``parent_id``."""

    det_id: int
    box: Box3D
    parent_id: int
    feature: Optional[np.ndarray] = None
    score: float = 1.0


@dataclass
class FrameBundle:
    frame_index: int
    timestamp: Optional[float]
    detections_2d: list[Detection2D] = field(default_factory=list)
    detections_3d: list[Detection3D] = field(default_factory=list)
    camera: Optional[CameraModel] = None

    def __post_init__(self):
        ids = {d.det_id for d in self.detections_2d}
        for d in self.detections_3d:
            if d.parent_id not in ids:
                raise ValueError(f"3D detection {d.det_id} references missing 2D detection {d.parent_id}")

    def parent_of(self, det3d: Detection3D) -> Detection2D:
        for d in self.detections_2d:
            if d.det_id == det3d.parent_id:
                return d
        raise KeyError(det3d.parent_id)

    def two_d_only(self) -> list[Detection2D]:
        used = {d.parent_id for d in self.detections_3d}
        return [d for d in self.detections_2d if d.det_id not in used]


@dataclass
class Track:
    id: int
    state: TrackState3D | TrackState2D
    status: TrackStatus = TrackStatus.TENTATIVE
    consecutive_hits: int = 1
    consecutive_misses: int = 0
    feature: Optional[np.ndarray] = None
    feature_2d: Optional[np.ndarray] = None
    age: int = 0


@dataclass
class TrackOutput:
    frame: int
    track_id: int
    box3d: Optional[Box3D]
    box2d: Optional[Box2D]
    status: TrackStatus = TrackStatus.CONFIRMED


# --------------------------------------------------------------------------
# appearance features


def _unit(v: np.ndarray) -> np.ndarray:
    n = np.linalg.norm(v)
    return v / n if n > 0 else v


class ConcatCombiner:
    """Default feature combiner: concatenate then scale to unit length.

    A learned combiner can replace it; any callable ``(f2d, f3d) -> vector``
    returning a unit-norm vector is accepted by the tracker.
    """

    def __init__(self, dim_2d: Optional[int] = None, dim_3d: Optional[int] = None):
        self.dim_2d = dim_2d
        self.dim_3d = dim_3d

    def __call__(self, f2d, f3d) -> np.ndarray:
        a = np.asarray(f2d, dtype=float).ravel()
        b = np.asarray(f3d, dtype=float).ravel()
        if self.dim_2d is not None and a.size != self.dim_2d:
            raise DimensionMismatch(f"2D feature has {a.size} entries, expected {self.dim_2d}")
        if self.dim_3d is not None and b.size != self.dim_3d:
            raise DimensionMismatch(f"3D feature has {b.size} entries, expected {self.dim_3d}")
        return _unit(np.concatenate([a, b]))


def fuse_features(f2d, f3d, combiner: Optional[Callable] = None) -> np.ndarray:
    return (combiner or ConcatCombiner())(f2d, f3d)


# --------------------------------------------------------------------------
# parameters


@dataclass
class TrackerParams:
    p_assn: float = 0.65
    n_init: int = 2
    n_term: int = 2
    mode: Mode = Mode.MODE_3D
    noise: NoiseConfig = field(default_factory=NoiseConfig)
    association: AssociationParams = field(default_factory=AssociationParams)
    camera: Optional[CameraModel] = None
    hit_threshold: float = 0.5
    default_dt: float = 0.1
    birth_range: float = 5.0
    birth_depth_var: float = 25.0
    default_size: tuple[float, float, float] = (0.6, 1.7, 0.6)
    use_2d_only_step: bool = True
    combiner: Optional[Callable] = None

    def __post_init__(self):
        if not 0 < self.p_assn < 1:
            raise ValueError("p_assn must lie in (0, 1)")
        if self.n_init < 1 or self.n_term < 1:
            raise ValueError("n_init and n_term must be at least 1")
        self.mode = Mode(self.mode)
        self.association.p_d = self.noise.p_d
        self.association.clutter = self.noise.clutter


# --------------------------------------------------------------------------
# track management


def lifecycle(tracks: Sequence[Track], hits: Sequence[bool], params: TrackerParams) -> list[TrackStatus]:
    """Apply one frame of hit/miss bookkeeping and status transitions in place."""
    for t, hit in zip(tracks, hits):
        if t.status is TrackStatus.DEAD:
            continue
        if hit:
            t.consecutive_hits += 1
            t.consecutive_misses = 0
        else:
            t.consecutive_hits = 0
            t.consecutive_misses += 1
        if t.status is TrackStatus.TENTATIVE and t.consecutive_hits >= params.n_init:
            t.status = TrackStatus.CONFIRMED
        if t.consecutive_misses >= params.n_term:
            t.status = TrackStatus.DEAD
    return [t.status for t in tracks]


def appearance_assignment(marginals: np.ndarray, gate_mask: np.ndarray, p_assn: float) -> dict[int, int]:
    """One-to-one track->detection pairs from JPDA marginals (miss column excluded).

    Hungarian on ``1 - marginal`` over gated pairs; a pair is kept only if
    its marginal reaches ``p_assn``.
    """
    P = np.asarray(marginals, dtype=float)[:, 1:]
    if P.size == 0:
        return {}
    cost = np.where(gate_mask, 1.0 - P, assoc.UNGATED_COST)
    pairs = assoc.hungarian(cost)
    return {i: j for i, j in pairs.items() if P[i, j] >= p_assn}


def appearance_update(
    tracks: Sequence[Track],
    features: Sequence[Optional[np.ndarray]],
    marginals: np.ndarray,
    gate_mask: np.ndarray,
    p_assn: float,
    attr: str = "feature",
) -> dict[int, int]:
    """Replace the features of confidently assigned tracks; others keep theirs."""
    pairs = appearance_assignment(marginals, gate_mask, p_assn)
    for i, j in pairs.items():
        if features[j] is not None:
            setattr(tracks[i], attr, np.asarray(features[j], dtype=float))
    return pairs


# --------------------------------------------------------------------------
# tracker


class Tracker:
    """Online multi-object tracker; call :meth:`step` once per frame."""

    def __init__(self, params: Optional[TrackerParams] = None):
        self.params = params or TrackerParams()
        self.tracks: list[Track] = []
        self._next_id = 0
        self._last_time: Optional[float] = None
        self._last_frame: Optional[int] = None
        self.last_marginals: dict[str, np.ndarray] = {}
        self._dim_3d: Optional[int] = None

    # -- helpers -----------------------------------------------------------

    def _new_id(self) -> int:
        tid = self._next_id
        self._next_id += 1
        return tid

    def _dt(self, frame: FrameBundle) -> Optional[float]:
        if frame.timestamp is not None and self._last_time is not None:
            dt = frame.timestamp - self._last_time
        elif self._last_frame is not None:
            dt = (frame.frame_index - self._last_frame) * self.params.default_dt
        else:
            return None
        if dt <= 0:
            raise NonMonotonicTimestamp(f"frame {frame.frame_index} does not advance time (dt={dt})")
        return dt

    def _predict_all(self, dt: float) -> None:
        if not self.tracks:
            return
        if self.params.mode is Mode.MODE_2D_ONLY:
            frames = dt / self.params.default_dt
            for t in self.tracks:
                t.state = predict_2d(t.state, frames, self.params.noise)
            return
        F = transition_matrix(dt)
        means = np.stack([t.state.mean for t in self.tracks]) @ F.T
        covs = np.stack([t.state.covariance for t in self.tracks])
        covs = F @ covs @ F.T + np.diag(self.params.noise.q3)
        covs = 0.5 * (covs + covs.transpose(0, 2, 1))
        for t, m, P in zip(self.tracks, means, covs):
            t.state = TrackState3D(m, P)

    def _fused(self, frame: FrameBundle, d3: Detection3D) -> Optional[np.ndarray]:
        parent = frame.parent_of(d3)
        if parent.feature is None and d3.feature is None:
            return None
        f2d = parent.feature if parent.feature is not None else np.zeros_like(d3.feature)
        f3d = d3.feature if d3.feature is not None else np.zeros_like(parent.feature)
        return fuse_features(f2d, f3d, self.params.combiner)

    def _associate(self, c_app, c_iou, mask) -> tuple[np.ndarray, list]:
        K, N = mask.shape
        clusters = assoc.build_clusters(mask)
        c_iou = c_iou.with_gate(mask)
        c_app = c_app.with_gate(mask) if c_app is not None else None
        results = []
        for cl in clusters:
            if not cl.detection_indices:
                continue
            res, _ = assoc.associate_cluster(c_app, c_iou, cl, self.params.association)
            results.append(res)
        return assoc.merge_results(results, K, N), clusters

    @staticmethod
    def _appearance_matrix(track_feats, det_feats) -> Optional[CostMatrix]:
        if not track_feats or not det_feats:
            return None
        if any(f is None for f in track_feats) or any(f is None for f in det_feats):
            return None
        return assoc.appearance_cost(np.stack(track_feats), np.stack(det_feats))

    # -- main loop ---------------------------------------------------------

    def step(self, frame: FrameBundle) -> list[TrackOutput]:
        """Advance one frame and return outputs for confirmed tracks."""
        dt = self._dt(frame)
        if dt is not None:
            self._predict_all(dt)
        if frame.timestamp is not None:
            self._last_time = frame.timestamp
        self._last_frame = frame.frame_index
        for t in self.tracks:
            t.age += 1

        if self.params.mode is Mode.MODE_2D_ONLY:
            hits, n_old = self._step_2d_mode(frame)
        else:
            hits, n_old = self._step_3d_mode(frame)

        lifecycle(self.tracks[:n_old], hits, self.params)
        self.tracks = [t for t in self.tracks if t.status is not TrackStatus.DEAD]
        return self.outputs(frame)

    def outputs(self, frame: FrameBundle) -> list[TrackOutput]:
        cam = frame.camera or self.params.camera
        shown = [t for t in self.tracks if t.status is TrackStatus.CONFIRMED]
        if not shown:
            return []
        if isinstance(shown[0].state, TrackState2D):
            return [TrackOutput(frame.frame_index, t.id, None, t.state.box()) for t in shown]
        boxes = ok = None
        if cam is not None:
            boxes, ok = project_means(np.stack([t.state.mean for t in shown]), cam)
            ok = (ok > MIN_DEPTH) & (boxes[:, 2] > 0) & (boxes[:, 3] > 0)
        out = []
        for k, t in enumerate(shown):
            box2d = Box2D.from_array(boxes[k]) if ok is not None and ok[k] else None
            out.append(TrackOutput(frame.frame_index, t.id, t.state.box(), box2d))
        return out

    # -- 3D mode -----------------------------------------------------------

    def _step_3d_mode(self, frame: FrameBundle) -> tuple[list[bool], int]:
        p = self.params
        noise = p.noise
        cam = frame.camera or p.camera
        old = list(self.tracks)
        K = len(old)
        hits = [False] * K

        # step 1: detections with both 2D and 3D boxes
        dets = frame.detections_3d
        N = len(dets)
        parents = [frame.parent_of(d) for d in dets]
        for d in dets:
            if d.feature is not None:
                self._dim_3d = np.size(d.feature)
        fused = [self._fused(frame, d) for d in dets]
        if K and N:
            means = np.stack([t.state.mean for t in old])
            covs = np.stack([t.state.covariance for t in old])
            Z = np.stack([box3d_measurement(d.box) for d in dets])
            S = covs[:, :MEAS3D_DIM, :MEAS3D_DIM] + np.diag(noise.r3)
            mask = assoc.gate(means[:, :MEAS3D_DIM], S, Z, p.association.gate_quantile, THETA)
            c_iou = assoc.iou_cost_3d(np.stack([t.state.box().to_array() for t in old]),
                                      np.stack([d.box.to_array() for d in dets]))
            c_app = self._appearance_matrix([t.feature for t in old], fused)
            M1, _ = self._associate(c_app, c_iou, mask)
            self.last_marginals["step1"] = M1
            self._dual_update(old, dets, parents, M1, cam)
            for i in range(K):
                hits[i] = M1[i, 0] < p.hit_threshold
            for i, j in appearance_assignment(M1, mask, p.p_assn).items():
                if fused[j] is not None:
                    old[i].feature = fused[j]
                if parents[j].feature is not None:
                    old[i].feature_2d = np.asarray(parents[j].feature, dtype=float)
            born = assoc.ungated_detections(mask)
        else:
            born = list(range(N))
        for j in born:
            self.tracks.append(
                Track(self._new_id(), init_state(dets[j].box, noise), feature=fused[j], feature_2d=parents[j].feature)
            )
        self._promote_newborn(len(self.tracks) - len(born))

        # step 2: detections with a 2D box only
        only2d = frame.two_d_only() if p.use_2d_only_step else []
        if only2d and cam is not None:
            hits2, born2 = self._step_2d_only_dets(old, only2d, cam)
            hits = [a or b for a, b in zip(hits, hits2)]
            start = len(self.tracks)
            for j in born2:
                st = init_state_from_ray(
                    only2d[j].box, cam, noise, range_m=p.birth_range, depth_var=p.birth_depth_var, size=p.default_size
                )
                feat = only2d[j].feature
                fused_feat = None
                if feat is not None and self._dim_3d is not None:
                    fused_feat = fuse_features(feat, np.zeros(self._dim_3d), p.combiner)
                self.tracks.append(Track(self._new_id(), st, feature=fused_feat, feature_2d=feat))
            self._promote_newborn(start)
        return hits, K

    def _promote_newborn(self, start: int) -> None:
        # a birth counts as the first consecutive match
        for t in self.tracks[start:]:
            if t.status is TrackStatus.TENTATIVE and t.consecutive_hits >= self.params.n_init:
                t.status = TrackStatus.CONFIRMED

    def _dual_update(self, tracks, dets, parents, M, cam) -> None:
        noise = self.params.noise
        rows = np.flatnonzero(M[:, 0] < 1.0)
        if rows.size == 0:
            return
        B = M[rows]
        B = B / B.sum(axis=1, keepdims=True)
        means = np.stack([tracks[i].state.mean for i in rows])
        covs = np.stack([tracks[i].state.covariance for i in rows])
        Z3 = np.stack([box3d_measurement(d.box) for d in dets])
        Z3 = np.broadcast_to(Z3, (len(rows),) + Z3.shape)
        means, covs = pda_batch(means, covs, Z3, means[:, :MEAS3D_DIM], H3, np.diag(noise.r3), B, THETA)
        finish_3d_batch(means)
        if cam is not None:
            zhat, J, valid = projection_jacobian(means, cam)
            if valid.any():
                Z2 = np.stack([p.box.to_array() for p in parents])
                Z2 = np.broadcast_to(Z2, (int(valid.sum()),) + Z2.shape)
                m2, c2 = pda_batch(means[valid], covs[valid], Z2, zhat[valid], J[valid], np.diag(noise.r2), B[valid])
                means[valid] = finish_3d_batch(m2)
                covs[valid] = c2
        for k, i in enumerate(rows):
            tracks[i].state = TrackState3D(means[k], covs[k])

    def _step_2d_only_dets(self, tracks, dets, cam) -> tuple[list[bool], list[int]]:
        p = self.params
        noise = p.noise
        K, N = len(tracks), len(dets)
        hits = [False] * K
        if K == 0:
            return hits, list(range(N))
        means = np.stack([t.state.mean for t in tracks])
        covs = np.stack([t.state.covariance for t in tracks])
        zhat, J, valid = projection_jacobian(means, cam)
        S = J @ covs @ J.transpose(0, 2, 1) + np.diag(noise.r2)
        Z = np.stack([d.box.to_array() for d in dets])
        mask = assoc.gate(zhat, S, Z, p.association.gate_quantile)
        mask &= valid[:, None]
        c_iou = assoc.iou_cost_2d(np.where(valid[:, None], zhat, 0.0), Z)
        c_app = self._appearance_matrix([t.feature_2d for t in tracks], [d.feature for d in dets])
        M2, _ = self._associate(c_app, c_iou, mask)
        self.last_marginals["step2"] = M2
        rows = np.flatnonzero(M2[:, 0] < 1.0)
        if rows.size:
            B = M2[rows] / M2[rows].sum(axis=1, keepdims=True)
            new_means, new_covs = pda_batch(
                means[rows], covs[rows], np.broadcast_to(Z, (len(rows),) + Z.shape), zhat[rows], J[rows],
                np.diag(noise.r2), B,
            )
            finish_3d_batch(new_means)
            for k, i in enumerate(rows):
                tracks[i].state = TrackState3D(new_means[k], new_covs[k])
                hits[i] = M2[i, 0] < p.hit_threshold
        appearance_update(tracks, [d.feature for d in dets], M2, mask, p.p_assn, "feature_2d")
        return hits, assoc.ungated_detections(mask)

    # -- 2D-only state mode ------------------------------------------------

    def _step_2d_mode(self, frame: FrameBundle) -> tuple[list[bool], int]:
        p = self.params
        noise = p.noise
        old = list(self.tracks)
        K = len(old)
        dets = frame.detections_2d
        N = len(dets)
        hits = [False] * K
        if K and N:
            model = BoxMeasurement2D()
            means = np.stack([t.state.mean for t in old])
            covs = np.stack([t.state.covariance for t in old])
            S = covs[:, :MEAS2D_DIM, :MEAS2D_DIM] + np.diag(noise.r2)
            Z = np.stack([box2d_center_form(d.box) for d in dets])
            mask = assoc.gate(means[:, :MEAS2D_DIM], S, Z, p.association.gate_quantile)
            c_iou = assoc.iou_cost_2d(np.stack([t.state.box().to_array() for t in old]),
                                      np.stack([d.box.to_array() for d in dets]))
            c_app = self._appearance_matrix([t.feature_2d for t in old], [d.feature for d in dets])
            M, _ = self._associate(c_app, c_iou, mask)
            self.last_marginals["step1"] = M
            for i, t in enumerate(old):
                row = M[i]
                if row[0] >= 1.0:
                    continue
                js = np.flatnonzero(row[1:] > 0)
                b = np.concatenate([[row[0]], row[1 + js]])
                b = b / b.sum()
                t.state = update_2d_only_mode(t.state, [dets[j].box for j in js], check_betas(b, len(js)), noise)
                hits[i] = row[0] < p.hit_threshold
            appearance_update(old, [d.feature for d in dets], M, mask, p.p_assn, "feature_2d")
            born = assoc.ungated_detections(mask)
        else:
            born = list(range(N))
        start = len(self.tracks)
        for j in born:
            self.tracks.append(Track(self._new_id(), init_state_2d(dets[j].box, noise), feature_2d=dets[j].feature))
        self._promote_newborn(start)
        return hits, K


def step(tracker: Tracker, frame: FrameBundle) -> tuple[Tracker, list[TrackOutput]]:
    """Functional form of :meth:`Tracker.step`."""
    outputs = tracker.step(frame)
    return tracker, outputs


def run(frames: Sequence[FrameBundle], params: Optional[TrackerParams] = None) -> list[list[TrackOutput]]:
    tracker = Tracker(params)
    return [tracker.step(f) for f in frames]
