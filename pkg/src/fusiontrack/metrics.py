"""CLEAR-MOT evaluation (MOTA, MOTP, IDS, FP, FN) on 2D or 3D boxes."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy.optimize import linear_sum_assignment

from . import kernels
from .errors import FrameMismatch
from .geometry import Box2D, Box3D, iou2d_matrix

DEFAULT_THRESHOLD = {"2d": 0.5, "3d": 0.25}
BUCKET_SIZE = 5.0


@dataclass
class Annotation:
    """One object in one frame: a ground-truth object or a tracker hypothesis."""

    obj_id: int
    box2d: Optional[Box2D] = None
    box3d: Optional[Box3D] = None


GroundTruthSequence = Sequence[Sequence[Annotation]]


@dataclass
class MetricsReport:
    mota: float
    motp: float
    ids: int
    fp: int
    fn: int
    matches: int
    total_gt: int
    mode: str = "3d"
    iou_threshold: float = 0.25
    bucket: Optional[tuple[float, float]] = None
    buckets: list["MetricsReport"] = field(default_factory=list)

    def as_dict(self) -> dict:
        out = {
            "mota": self.mota,
            "motp": self.motp,
            "ids": self.ids,
            "fp": self.fp,
            "fn": self.fn,
            "matches": self.matches,
            "total_gt": self.total_gt,
            "mode": self.mode,
            "iou_threshold": self.iou_threshold,
        }
        if self.bucket is not None:
            out["bucket"] = list(self.bucket)
        if self.buckets:
            out["buckets"] = [b.as_dict() for b in self.buckets]
        return out

    def summary(self) -> str:
        head = f"mode={self.mode} iou_threshold={self.iou_threshold:g}"
        if self.bucket is not None:
            head = f"range [{self.bucket[0]:g}, {self.bucket[1]:g}) m"
        return (
            f"{head}: MOTA={self.mota:.4f} MOTP={self.motp:.4f} IDS={self.ids} "
            f"FP={self.fp} FN={self.fn} matches={self.matches} gt={self.total_gt}"
        )


@dataclass
class _Event:
    kind: str  # "match", "fn", "fp"
    range_m: float
    iou: float = 0.0
    switch: bool = False


def _box(a: Annotation, mode: str):
    box = a.box3d if mode == "3d" else a.box2d
    if box is None:
        raise ValueError(f"annotation {a.obj_id} has no {mode} box")
    return box


def _iou_matrix(gts, hyps, mode):
    if not gts or not hyps:
        return np.zeros((len(gts), len(hyps)))
    if mode == "2d":
        return iou2d_matrix(np.stack([_box(g, mode).to_array() for g in gts]),
                            np.stack([_box(h, mode).to_array() for h in hyps]))
    A = np.stack([_box(g, mode).to_array() for g in gts])
    B = np.stack([_box(h, mode).to_array() for h in hyps])
    # footprints farther apart than their half-diagonals cannot overlap
    ra = 0.5 * np.hypot(A[:, 3], A[:, 4])
    rb = 0.5 * np.hypot(B[:, 3], B[:, 4])
    dist = np.hypot(A[:, None, 0] - B[None, :, 0], A[:, None, 2] - B[None, :, 2])
    near = dist < ra[:, None] + rb[None, :]
    out = np.zeros((len(A), len(B)))
    if near.any():
        ii, jj = np.nonzero(near)
        out[ii, jj] = kernels.iou3d_batch(A[ii], B[jj])
    return out


def _range(a: Annotation, origin) -> float:
    if a.box3d is None:
        return math.nan
    return math.hypot(a.box3d.x - origin[0], a.box3d.z - origin[2])


def _match_events(gt, hyp, mode, thr, origins):
    if len(gt) != len(hyp):
        raise FrameMismatch(f"ground truth has {len(gt)} frames, hypotheses {len(hyp)}")
    last: dict[int, int] = {}
    events: list[_Event] = []
    for f, (gts, hyps) in enumerate(zip(gt, hyp)):
        origin = origins[f] if origins is not None else (0.0, 0.0, 0.0)
        ious = _iou_matrix(list(gts), list(hyps), mode)
        hyp_index = {h.obj_id: k for k, h in enumerate(hyps)}
        matched_g: dict[int, int] = {}
        used_h: set[int] = set()
        # keep still-valid correspondences from earlier frames
        for g_i, g in enumerate(gts):
            h_id = last.get(g.obj_id)
            k = hyp_index.get(h_id) if h_id is not None else None
            if k is not None and k not in used_h and ious[g_i, k] >= thr:
                matched_g[g_i] = k
                used_h.add(k)
        free_g = [i for i in range(len(gts)) if i not in matched_g]
        free_h = [k for k in range(len(hyps)) if k not in used_h]
        new_pairs = []
        if free_g and free_h:
            sub = ious[np.ix_(free_g, free_h)]
            cost = np.where(sub >= thr, 1.0 - sub, 1e9)
            rows, cols = linear_sum_assignment(cost)
            for r, c in zip(rows, cols):
                if sub[r, c] >= thr:
                    new_pairs.append((free_g[r], free_h[c]))
        for g_i, k in new_pairs:
            matched_g[g_i] = k
            used_h.add(k)
        for g_i, g in enumerate(gts):
            rng = _range(g, origin)
            if g_i in matched_g:
                k = matched_g[g_i]
                h_id = hyps[k].obj_id
                switch = g.obj_id in last and last[g.obj_id] != h_id
                last[g.obj_id] = h_id
                events.append(_Event("match", rng, float(ious[g_i, k]), switch))
            else:
                events.append(_Event("fn", rng))
        for k, h in enumerate(hyps):
            if k not in used_h:
                events.append(_Event("fp", _range(h, origin)))
    return events


def _report(events, mode, thr, total_gt=None, bucket=None) -> MetricsReport:
    matches = [e for e in events if e.kind == "match"]
    fn = sum(e.kind == "fn" for e in events)
    fp = sum(e.kind == "fp" for e in events)
    ids = sum(e.switch for e in matches)
    n_gt = len(matches) + fn if total_gt is None else total_gt
    mota = 1.0 - (fn + fp + ids) / n_gt if n_gt > 0 else (1.0 if fp == 0 else -math.inf)
    motp = sum(e.iou for e in matches) / len(matches) if matches else 0.0
    return MetricsReport(mota, motp, ids, fp, fn, len(matches), n_gt, mode, thr, bucket)


def evaluate(
    gt: GroundTruthSequence,
    hyp: GroundTruthSequence,
    mode: str = "3d",
    iou_threshold: Optional[float] = None,
) -> MetricsReport:
    """CLEAR-MOT metrics with IoU-based matching; MOTP is the mean matched IoU."""
    mode = mode.lower()
    if mode not in DEFAULT_THRESHOLD:
        raise ValueError(f"mode must be '2d' or '3d', got {mode!r}")
    thr = DEFAULT_THRESHOLD[mode] if iou_threshold is None else float(iou_threshold)
    return _report(_match_events(gt, hyp, mode, thr, None), mode, thr)


def distance_buckets(
    gt: GroundTruthSequence,
    hyp: GroundTruthSequence,
    iou_threshold: Optional[float] = None,
    origins: Optional[Sequence[Sequence[float]]] = None,
    bucket_size: float = BUCKET_SIZE,
) -> list[MetricsReport]:
    """Per-range breakdown in 3D; bucket k covers ``[k, k + 1) * bucket_size`` metres.

    Matches, misses and switches are binned by the ground-truth range and
    false positives by the hypothesis range, using the same global matching
    as :func:`evaluate`.
    """
    thr = DEFAULT_THRESHOLD["3d"] if iou_threshold is None else float(iou_threshold)
    events = _match_events(gt, hyp, "3d", thr, origins)
    binned: dict[int, list[_Event]] = {}
    for e in events:
        if math.isnan(e.range_m):
            continue
        binned.setdefault(int(math.floor(e.range_m / bucket_size)), []).append(e)
    out = []
    for k in sorted(binned):
        out.append(_report(binned[k], "3d", thr, bucket=(k * bucket_size, (k + 1) * bucket_size)))
    return out


def outputs_to_annotations(outputs) -> list[list[Annotation]]:
    """Convert per-frame tracker outputs into hypothesis annotations."""
    return [[Annotation(o.track_id, o.box2d, o.box3d) for o in frame] for frame in outputs]
