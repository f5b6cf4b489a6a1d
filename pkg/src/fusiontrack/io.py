"""File formats: detections (KITTI-compatible), feature sidecars, tracks, configs.

Every text file starts with a ``# fusion-tracker/v1 <kind>`` header. Floats
are written with ``repr`` so a write/read/write cycle is byte-identical.
"""
from __future__ import annotations

import math
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np

from .association import AssociationParams
from .errors import InconsistentFrameOrder, InvalidConfig, MissingField, ParseError
from .estimation import CameraModel, NoiseConfig
from .geometry import Box2D, Box3D
from .metrics import Annotation
from .simulator import ScenarioConfig, TurnSegment, default_camera
from .tracker import Detection2D, Detection3D, FrameBundle, Mode, TrackerParams, TrackOutput, TrackStatus

HEADER = "# fusion-tracker/v1"
FEATURE_MAGIC = b"FTFEAT01"
KITTI_FIELDS = 17  # frame followed by the 16 KITTI detection columns


def _f(x: float) -> str:
    return repr(float(x))


def _header_info(line: str, kind: str) -> dict[str, str]:
    parts = line.split()
    info = {}
    if len(parts) >= 3 and parts[2] == kind:
        for p in parts[3:]:
            if "=" in p:
                k, v = p.split("=", 1)
                info[k] = v
    return info


# --------------------------------------------------------------------------
# feature sidecars


def write_features(path, features: np.ndarray) -> None:
    """Binary sidecar: magic, uint32 dim, uint32 count, then little-endian float32 rows."""
    arr = np.asarray(features, dtype="<f4")
    if arr.ndim != 2:
        arr = arr.reshape(len(arr), -1) if arr.size else np.zeros((0, 0), "<f4")
    count, dim = arr.shape
    with open(path, "wb") as fh:
        fh.write(FEATURE_MAGIC)
        fh.write(struct.pack("<II", dim, count))
        fh.write(arr.tobytes())


def read_features(path) -> np.ndarray:
    data = Path(path).read_bytes()
    if len(data) < 16 or data[:8] != FEATURE_MAGIC:
        raise ParseError("not a feature sidecar (bad magic)", path=path)
    dim, count = struct.unpack("<II", data[8:16])
    body = data[16:]
    if len(body) != 4 * dim * count:
        raise ParseError(f"sidecar holds {len(body)} bytes, header promises {4 * dim * count}", path=path)
    return np.frombuffer(body, dtype="<f4").reshape(count, dim).astype(float)


def sidecar_paths(path) -> tuple[Path, Path]:
    p = Path(path)
    return p.with_name(p.name + ".f2d"), p.with_name(p.name + ".f3d")


# --------------------------------------------------------------------------
# detections


@dataclass
class DetectionRecord:
    frame: int
    det_id: int
    label: str
    score: float
    box2d: Box2D
    box3d: Optional[Box3D] = None
    feature2d_ref: int = -1
    feature3d_ref: int = -1
    timestamp: Optional[float] = None


def format_detection(r: DetectionRecord) -> str:
    b = r.box2d
    left, top, right, bottom = b.u, b.v, b.u + b.w, b.v + b.h
    if r.box3d is None:
        dims = ["-1", "-1", "-1", "-1000", "-1000", "-1000", "-10"]
    else:
        c = r.box3d
        dims = [_f(c.h), _f(c.w), _f(c.l), _f(c.x), _f(c.y), _f(c.z), _f(c.theta)]
    fields = [str(r.frame), r.label, "0", "0", "-10", _f(left), _f(top), _f(right), _f(bottom), *dims, _f(r.score)]
    fields += [str(r.det_id), str(r.feature2d_ref), str(r.feature3d_ref)]
    fields.append("-" if r.timestamp is None else _f(r.timestamp))
    return " ".join(fields)


def _num(tok: str, line_no: int, path, what: str) -> float:
    try:
        v = float(tok)
    except ValueError:
        raise ParseError(f"malformed {what} {tok!r}", line_no, path) from None
    if not math.isfinite(v):
        raise ParseError(f"non-finite {what} {tok!r}", line_no, path)
    return v


def _int(tok: str, line_no: int, path, what: str) -> int:
    try:
        return int(tok)
    except ValueError:
        raise ParseError(f"malformed {what} {tok!r}", line_no, path) from None


def parse_detection(line: str, line_no: int = 0, path=None, auto_id: int = 0) -> DetectionRecord:
    """Parse one line: frame plus the 16 KITTI detection fields, optionally followed by det_id, feature refs and a timestamp."""
    tok = line.split()
    if len(tok) < KITTI_FIELDS:
        raise MissingField(f"expected at least {KITTI_FIELDS} fields, got {len(tok)}", line_no, path)
    if len(tok) > KITTI_FIELDS + 4:
        raise ParseError(f"too many fields ({len(tok)})", line_no, path)
    frame = _int(tok[0], line_no, path, "frame")
    if frame < 0:
        raise ParseError("negative frame index", line_no, path)
    left, top, right, bottom = (_num(t, line_no, path, "bbox") for t in tok[5:9])
    try:
        box2d = Box2D(left, top, right - left, bottom - top)
    except ValueError as e:
        raise ParseError(str(e), line_no, path) from None
    h, w, l, x, y, z, ry = (_num(t, line_no, path, "3D field") for t in tok[9:16])
    box3d = None
    if not (h < 0 or w < 0 or l < 0):
        try:
            box3d = Box3D(x, y, z, l, w, h, ry)
        except ValueError as e:
            raise ParseError(str(e), line_no, path) from None
    score = _num(tok[16], line_no, path, "score")
    extra = tok[KITTI_FIELDS:]
    det_id = _int(extra[0], line_no, path, "det_id") if len(extra) > 0 else auto_id
    f2 = _int(extra[1], line_no, path, "feature2d_ref") if len(extra) > 1 else -1
    f3 = _int(extra[2], line_no, path, "feature3d_ref") if len(extra) > 2 else -1
    ts = None
    if len(extra) > 3 and extra[3] != "-":
        ts = _num(extra[3], line_no, path, "timestamp")
    return DetectionRecord(frame, det_id, tok[1], score, box2d, box3d, f2, f3, ts)


def _frames_hint(lines: list[str], kind: str) -> int:
    for line in lines[:1]:
        if line.startswith(HEADER):
            info = _header_info(line, kind)
            if "frames" in info:
                try:
                    return int(info["frames"])
                except ValueError:
                    raise ParseError(f"bad frames= value {info['frames']!r}", 1) from None
    return 0


def read_detection_records(path) -> tuple[list[DetectionRecord], int]:
    """All records in file order plus the frame count announced by the header (0 if none)."""
    lines = Path(path).read_text().splitlines()
    n_frames = _frames_hint(lines, "detections")
    records: list[DetectionRecord] = []
    last_frame = -1
    index_in_frame = 0
    for no, raw in enumerate(lines, start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        rec = parse_detection(line, no, path)
        if rec.frame < last_frame:
            raise InconsistentFrameOrder(f"frame {rec.frame} after frame {last_frame}", no, path)
        index_in_frame = index_in_frame + 1 if rec.frame == last_frame else 0
        if len(line.split()) == KITTI_FIELDS:
            # plain KITTI line: number detections in file order within the frame
            rec.det_id = index_in_frame
        last_frame = rec.frame
        records.append(rec)
    return records, n_frames


def read_detections(path, camera: Optional[CameraModel] = None) -> list[FrameBundle]:
    """Load a detection file (and its feature sidecars if present) as frame bundles.

    Frames without detections are kept as empty bundles so frame indices stay contiguous.
    """
    records, n_frames = read_detection_records(path)
    p2, p3 = sidecar_paths(path)
    f2 = read_features(p2) if p2.exists() else None
    f3 = read_features(p3) if p3.exists() else None
    n_frames = max(n_frames, records[-1].frame + 1 if records else 0)
    by_frame: list[list[DetectionRecord]] = [[] for _ in range(n_frames)]
    for r in records:
        by_frame[r.frame].append(r)

    def feat(table, ref, which):
        if ref < 0:
            return None
        if table is None or ref >= len(table):
            raise ParseError(f"{which} feature reference {ref} outside sidecar", path=path)
        return table[ref]

    frames = []
    for f, recs in enumerate(by_frame):
        seen = set()
        d2, d3 = [], []
        for r in recs:
            if r.det_id in seen:
                raise ParseError(f"duplicate det_id {r.det_id} in frame {f}", path=path)
            seen.add(r.det_id)
            d2.append(Detection2D(r.det_id, r.box2d, feat(f2, r.feature2d_ref, "2D"), r.score, r.label))
            if r.box3d is not None:
                d3.append(Detection3D(r.det_id, r.box3d, r.det_id, feat(f3, r.feature3d_ref, "3D"), r.score))
        ts = next((r.timestamp for r in recs if r.timestamp is not None), None)
        frames.append(FrameBundle(f, ts, d2, d3, camera))
    return frames


def detection_records(frames: Sequence[FrameBundle]) -> tuple[list[DetectionRecord], np.ndarray, np.ndarray]:
    """Flatten frame bundles into records plus stacked 2D and 3D feature tables."""
    records, t2, t3 = [], [], []
    for fr in frames:
        by_parent = {d.parent_id: d for d in fr.detections_3d}
        for d in fr.detections_2d:
            d3 = by_parent.get(d.det_id)
            r2 = r3 = -1
            if d.feature is not None:
                r2 = len(t2)
                t2.append(np.asarray(d.feature, float))
            if d3 is not None and d3.feature is not None:
                r3 = len(t3)
                t3.append(np.asarray(d3.feature, float))
            records.append(DetectionRecord(
                fr.frame_index, d.det_id, d.label, d.score, d.box,
                None if d3 is None else d3.box, r2, r3, fr.timestamp,
            ))
    to_arr = lambda t: np.array(t) if t else np.zeros((0, 0))
    return records, to_arr(t2), to_arr(t3)


def write_detections(path, frames: Sequence[FrameBundle]) -> None:
    """Write frame bundles; features go to ``<path>.f2d`` / ``<path>.f3d`` sidecars."""
    records, t2, t3 = detection_records(frames)
    lines = [f"{HEADER} detections frames={len(frames)}"]
    lines += [format_detection(r) for r in records]
    Path(path).write_text("\n".join(lines) + "\n")
    p2, p3 = sidecar_paths(path)
    for table, p in ((t2, p2), (t3, p3)):
        if len(table):
            write_features(p, table)
        elif p.exists():
            p.unlink()


# --------------------------------------------------------------------------
# tracks and ground truth


@dataclass
class TrackRecord:
    frame: int
    track_id: int
    box3d: Optional[Box3D]
    box2d: Optional[Box2D]
    status: str = "confirmed"


def format_track(r: TrackRecord) -> str:
    fields = [str(r.frame), str(r.track_id), r.status]
    if r.box2d is None:
        fields += ["-"] * 4
    else:
        fields += [_f(v) for v in r.box2d.to_array()]
    if r.box3d is None:
        fields += ["-"] * 7
    else:
        fields += [_f(v) for v in r.box3d.to_array()]
    return " ".join(fields)


def parse_track(line: str, line_no: int = 0, path=None) -> TrackRecord:
    """``frame track_id status u v w h x y z l w h theta``; ``-`` marks an absent box."""
    tok = line.split()
    if len(tok) != 14:
        raise MissingField(f"expected 14 fields, got {len(tok)}", line_no, path)
    frame = _int(tok[0], line_no, path, "frame")
    tid = _int(tok[1], line_no, path, "track_id")
    try:
        b2 = None if tok[3] == "-" else Box2D(*(_num(t, line_no, path, "2D box") for t in tok[3:7]))
        b3 = None if tok[7] == "-" else Box3D(*(_num(t, line_no, path, "3D box") for t in tok[7:14]))
    except ParseError:
        raise
    except ValueError as e:
        raise ParseError(str(e), line_no, path) from None
    return TrackRecord(frame, tid, b3, b2, tok[2])


def write_tracks(path, records: Iterable[TrackRecord], n_frames: Optional[int] = None, kind: str = "tracks") -> None:
    records = list(records)
    if n_frames is None:
        n_frames = max((r.frame for r in records), default=-1) + 1
    lines = [f"{HEADER} {kind} frames={n_frames}"] + [format_track(r) for r in records]
    Path(path).write_text("\n".join(lines) + "\n")


def read_track_records(path, kind: str = "tracks") -> tuple[list[TrackRecord], int]:
    lines = Path(path).read_text().splitlines()
    n_frames = _frames_hint(lines, kind)
    out = []
    last = -1
    for no, raw in enumerate(lines, start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        r = parse_track(line, no, path)
        if r.frame < last:
            raise InconsistentFrameOrder(f"frame {r.frame} after frame {last}", no, path)
        last = r.frame
        out.append(r)
    return out, max(n_frames, last + 1)


def read_annotations(path, kind: str = "tracks", n_frames: Optional[int] = None) -> list[list[Annotation]]:
    """Per-frame annotations from a tracks or ground-truth file, for the evaluator."""
    records, found = read_track_records(path, kind)
    n = max(found, n_frames or 0)
    frames: list[list[Annotation]] = [[] for _ in range(n)]
    for r in records:
        frames[r.frame].append(Annotation(r.track_id, r.box2d, r.box3d))
    return frames


def outputs_to_records(outputs: Sequence[Sequence[TrackOutput]]) -> list[TrackRecord]:
    return [
        TrackRecord(o.frame, o.track_id, o.box3d, o.box2d, o.status.value)
        for frame in outputs
        for o in frame
    ]


def annotations_to_records(frames: Sequence[Sequence[Annotation]], status: str = "gt") -> list[TrackRecord]:
    return [TrackRecord(f, a.obj_id, a.box3d, a.box2d, status) for f, fr in enumerate(frames) for a in fr]


# --------------------------------------------------------------------------
# configuration files


def _parse_kv(path) -> list[tuple[str, str, int]]:
    out = []
    for no, raw in enumerate(Path(path).read_text().splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ParseError(f"expected key = value, got {raw.strip()!r}", no, path)
        k, v = line.split("=", 1)
        out.append((k.strip().lower(), v.strip(), no))
    return out


def _floats(v: str, n: Optional[int], key: str, no: int, path) -> np.ndarray:
    toks = [t for t in v.replace(",", " ").split() if t]
    vals = np.array([_num(t, no, path, key) for t in toks])
    if n is not None and len(vals) != n:
        raise ParseError(f"{key} needs {n} values, got {len(vals)}", no, path)
    return vals


def _bool(v: str, key: str, no: int, path) -> bool:
    lv = v.lower()
    if lv in ("1", "true", "yes", "on"):
        return True
    if lv in ("0", "false", "no", "off"):
        return False
    raise ParseError(f"{key} must be a boolean, got {v!r}", no, path)


_TRACKER_SCALARS = {
    # key: (section, attribute, type)
    "p_assn": ("t", "p_assn", float),
    "n_init": ("t", "n_init", int),
    "n_term": ("t", "n_term", int),
    "hit_threshold": ("t", "hit_threshold", float),
    "default_dt": ("t", "default_dt", float),
    "birth_range": ("t", "birth_range", float),
    "birth_depth_var": ("t", "birth_depth_var", float),
    "p_d": ("n", "p_d", float),
    "lambda": ("n", "clutter", float),
    "init_vel_var": ("n", "init_vel_var", float),
    "m": ("a", "m_best", int),
    "exact_max_side": ("a", "exact_max_side", int),
    "exact_max_events": ("a", "exact_max_events", int),
    "gate_quantile": ("a", "gate_quantile", float),
    "entropy_temperature": ("a", "temperature", float),
    "fx": ("c", "fx", float),
    "fy": ("c", "fy", float),
    "cx": ("c", "cx", float),
    "cy": ("c", "cy", float),
}
_TRACKER_VECTORS = {"q3": 9, "r3": 7, "r2": 4, "q2": 6, "rotation": 9, "translation": 3, "default_size": 3}


def read_config(path) -> TrackerParams:
    """Flat ``key = value`` tracker configuration; unknown keys are errors."""
    t, n, a, c = {}, {}, {}, {}
    sections = {"t": t, "n": n, "a": a, "c": c}
    seen = set()
    for key, v, no in _parse_kv(path):
        if key in seen:
            raise ParseError(f"duplicate key {key!r}", no, path)
        seen.add(key)
        if key in _TRACKER_SCALARS:
            sec, attr, typ = _TRACKER_SCALARS[key]
            sections[sec][attr] = _int(v, no, path, key) if typ is int else _num(v, no, path, key)
        elif key in _TRACKER_VECTORS:
            vals = _floats(v, _TRACKER_VECTORS[key], key, no, path)
            if key in ("rotation", "translation"):
                c[key] = vals
            elif key == "default_size":
                t[key] = tuple(vals)
            else:
                n[key] = vals
        elif key == "mode":
            if v.lower() not in ("2d", "3d"):
                raise ParseError(f"mode must be 2d or 3d, got {v!r}", no, path)
            t["mode"] = Mode(v.lower())
        elif key == "use_2d_only_step":
            t[key] = _bool(v, key, no, path)
        else:
            raise ParseError(f"unknown config key {key!r}", no, path)
    try:
        camera = None
        if c:
            missing = {"fx", "fy", "cx", "cy"} - set(c)
            if missing:
                raise InvalidConfig(f"camera needs {sorted(missing)}")
            camera = CameraModel(**c)
        return TrackerParams(
            noise=NoiseConfig(**n), association=AssociationParams(**a), camera=camera, **t
        )
    except InvalidConfig:
        raise
    except (ValueError, TypeError) as e:
        raise InvalidConfig(f"{path}: {e}") from None


def format_config(params: TrackerParams) -> str:
    nz, ap = params.noise, params.association
    vec = lambda a: ", ".join(_f(x) for x in np.ravel(a))
    lines = [
        f"{HEADER} config",
        f"mode = {params.mode.value}",
        f"p_assn = {_f(params.p_assn)}",
        f"n_init = {params.n_init}",
        f"n_term = {params.n_term}",
        f"hit_threshold = {_f(params.hit_threshold)}",
        f"default_dt = {_f(params.default_dt)}",
        f"birth_range = {_f(params.birth_range)}",
        f"birth_depth_var = {_f(params.birth_depth_var)}",
        f"default_size = {vec(params.default_size)}",
        f"use_2d_only_step = {str(params.use_2d_only_step).lower()}",
        f"p_d = {_f(nz.p_d)}",
        f"lambda = {_f(nz.clutter)}",
        f"init_vel_var = {_f(nz.init_vel_var)}",
        f"q3 = {vec(nz.q3)}",
        f"r3 = {vec(nz.r3)}",
        f"r2 = {vec(nz.r2)}",
        f"q2 = {vec(nz.q2)}",
        f"m = {ap.m_best}",
        f"exact_max_side = {ap.exact_max_side}",
        f"exact_max_events = {ap.exact_max_events}",
        f"gate_quantile = {_f(ap.gate_quantile)}",
        f"entropy_temperature = {_f(ap.temperature)}",
    ]
    cam = params.camera
    if cam is not None:
        lines += [
            f"fx = {_f(cam.fx)}", f"fy = {_f(cam.fy)}", f"cx = {_f(cam.cx)}", f"cy = {_f(cam.cy)}",
            f"rotation = {vec(cam.rotation)}", f"translation = {vec(cam.translation)}",
        ]
    return "\n".join(lines) + "\n"


def write_config(path, params: TrackerParams) -> None:
    Path(path).write_text(format_config(params))


_SCENARIO_KEYS = {
    "num_targets": int, "num_frames": int, "frame_rate": float, "seed": int,
    "ground_y": float, "max_speed": float, "min_speed": float, "crossing_pairs": int,
    "p_d": float, "clutter_rate": float, "two_d_only_fraction": float,
    "sigma_pos": float, "sigma_size": float, "sigma_theta": float, "sigma_px": float,
    "feature_dim": int, "feature_noise": float, "feature_separation": float,
}
_SCENARIO_PAIRS = ("x_range", "z_range", "size_range_lw", "size_range_h")


def read_scenario_config(path) -> ScenarioConfig:
    """Flat ``key = value`` scenario file; ``turn = target, start, end, rate`` may repeat."""
    kw: dict = {}
    cam: dict = {}
    turns = []
    seen = set()
    for key, v, no in _parse_kv(path):
        if key != "turn":
            if key in seen:
                raise ParseError(f"duplicate key {key!r}", no, path)
            seen.add(key)
        if key in _SCENARIO_KEYS:
            typ = _SCENARIO_KEYS[key]
            kw[key] = _int(v, no, path, key) if typ is int else _num(v, no, path, key)
        elif key in _SCENARIO_PAIRS:
            kw[key] = tuple(_floats(v, 2, key, no, path))
        elif key in ("fx", "fy", "cx", "cy"):
            cam[key] = _num(v, no, path, key)
        elif key in ("rotation", "translation"):
            cam[key] = _floats(v, 9 if key == "rotation" else 3, key, no, path)
        elif key == "turn":
            t, s, e, r = _floats(v, 4, key, no, path)
            turns.append(TurnSegment(int(t), int(s), int(e), float(r)))
        else:
            raise ParseError(f"unknown scenario key {key!r}", no, path)
    try:
        if cam:
            base = default_camera()
            params = dict(fx=base.fx, fy=base.fy, cx=base.cx, cy=base.cy,
                          rotation=base.rotation, translation=base.translation)
            params.update(cam)
            kw["camera"] = CameraModel(**params)
        return ScenarioConfig(turns=turns, **kw)
    except InvalidConfig:
        raise
    except (ValueError, TypeError) as e:
        raise InvalidConfig(f"{path}: {e}") from None
