"""Box types and overlap measures.

Coordinates follow a y-up tracking frame: the ground plane is (x, z) and a
:class:`Box3D` is anchored at the centre of its bottom face, so it spans
``[y, y + h]`` vertically.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import kernels
from ._kernels_py import CLIP_EPS, area as _shoelace, footprint as _footprint


def wrap_angle(a: float) -> float:
    """Map an angle to (-pi, pi]; angles already in range are returned unchanged."""
    if -math.pi < a <= math.pi:
        return a
    a = math.fmod(a + math.pi, 2.0 * math.pi)
    if a <= 0.0:
        a += 2.0 * math.pi
    return a - math.pi


def wrap_angles(a: np.ndarray) -> np.ndarray:
    a = np.asarray(a, dtype=float)
    out = np.mod(a + np.pi, 2.0 * np.pi)
    out = np.where(out <= 0.0, out + 2.0 * np.pi, out) - np.pi
    return np.where((a > -np.pi) & (a <= np.pi), a, out)


@dataclass(frozen=True)
class Box2D:
    """Image-plane box: upper-left corner ``(u, v)`` plus width and height in pixels."""

    u: float
    v: float
    w: float
    h: float

    def __post_init__(self):
        if not (self.w > 0 and self.h > 0):
            raise ValueError(f"Box2D needs positive size, got w={self.w}, h={self.h}")

    @property
    def center(self) -> tuple[float, float]:
        return self.u + 0.5 * self.w, self.v + 0.5 * self.h

    def to_array(self) -> np.ndarray:
        return np.array([self.u, self.v, self.w, self.h], dtype=float)

    @classmethod
    def from_array(cls, a) -> "Box2D":
        return cls(float(a[0]), float(a[1]), float(a[2]), float(a[3]))


@dataclass(frozen=True)
class Box3D:
    """Oriented cuboid. ``theta`` is yaw about the vertical axis, kept in (-pi, pi]."""

    x: float
    y: float
    z: float
    l: float
    w: float
    h: float
    theta: float = 0.0

    def __post_init__(self):
        if not (self.l > 0 and self.w > 0 and self.h > 0):
            raise ValueError(f"Box3D needs positive size, got l={self.l}, w={self.w}, h={self.h}")
        object.__setattr__(self, "theta", wrap_angle(self.theta))

    @property
    def volume(self) -> float:
        return self.l * self.w * self.h

    def footprint(self) -> "ConvexPolygon2D":
        return ConvexPolygon2D(tuple(_footprint(self.x, self.z, self.l, self.w, self.theta)))

    def corners(self) -> np.ndarray:
        """The eight corners as an ``(8, 3)`` array, bottom face first."""
        fp = np.array(_footprint(self.x, self.z, self.l, self.w, self.theta))
        out = np.empty((8, 3))
        out[:4, 0] = out[4:, 0] = fp[:, 0]
        out[:4, 2] = out[4:, 2] = fp[:, 1]
        out[:4, 1] = self.y
        out[4:, 1] = self.y + self.h
        return out

    def contains(self, pts: np.ndarray) -> np.ndarray:
        """Boolean mask of which ``(n, 3)`` points lie inside the box."""
        pts = np.asarray(pts, dtype=float)
        c, s = math.cos(self.theta), math.sin(self.theta)
        dx = pts[:, 0] - self.x
        dz = pts[:, 2] - self.z
        u = c * dx + s * dz
        v = -s * dx + c * dz
        dy = pts[:, 1] - self.y
        return (np.abs(u) <= 0.5 * self.l) & (np.abs(v) <= 0.5 * self.w) & (dy >= 0) & (dy <= self.h)

    def to_array(self) -> np.ndarray:
        return np.array([self.x, self.y, self.z, self.l, self.w, self.h, self.theta], dtype=float)

    @classmethod
    def from_array(cls, a) -> "Box3D":
        return cls(*(float(v) for v in a[:7]))


@dataclass(frozen=True)
class ConvexPolygon2D:
    """Convex polygon in the ground plane with CCW ``(x, z)`` vertices.

    Zero vertices denotes the empty polygon.
    """

    vertices: tuple[tuple[float, float], ...] = ()

    def __post_init__(self):
        verts = tuple((float(p[0]), float(p[1])) for p in self.vertices)
        if 0 < len(verts) < 3:
            raise ValueError("a polygon needs at least three vertices (or none)")
        object.__setattr__(self, "vertices", verts)

    def __len__(self):
        return len(self.vertices)

    @property
    def is_empty(self) -> bool:
        return not self.vertices

    def is_convex_ccw(self, eps: float = CLIP_EPS) -> bool:
        n = len(self.vertices)
        if n == 0:
            return True
        for i in range(n):
            (x0, y0), (x1, y1), (x2, y2) = (self.vertices[(i + k) % n] for k in range(3))
            if (x1 - x0) * (y2 - y1) - (y1 - y0) * (x2 - x1) < -eps:
                return False
        return True

    @classmethod
    def rectangle(cls, x0: float, z0: float, x1: float, z1: float) -> "ConvexPolygon2D":
        return cls(((x0, z0), (x1, z0), (x1, z1), (x0, z1)))


def iou2d(a: Box2D, b: Box2D) -> float:
    iw = min(a.u + a.w, b.u + b.w) - max(a.u, b.u)
    ih = min(a.v + a.h, b.v + b.h) - max(a.v, b.v)
    if iw <= 0 or ih <= 0:
        return 0.0
    inter = iw * ih
    return inter / (a.w * a.h + b.w * b.h - inter)


def iou2d_matrix(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Pairwise IoU between ``(K, 4)`` and ``(N, 4)`` arrays of ``(u, v, w, h)``."""
    a = np.asarray(a, dtype=float).reshape(-1, 4)
    b = np.asarray(b, dtype=float).reshape(-1, 4)
    iw = np.minimum(a[:, None, 0] + a[:, None, 2], b[None, :, 0] + b[None, :, 2]) - np.maximum(
        a[:, None, 0], b[None, :, 0]
    )
    ih = np.minimum(a[:, None, 1] + a[:, None, 3], b[None, :, 1] + b[None, :, 3]) - np.maximum(
        a[:, None, 1], b[None, :, 1]
    )
    inter = np.clip(iw, 0, None) * np.clip(ih, 0, None)
    union = (a[:, 2] * a[:, 3])[:, None] + (b[:, 2] * b[:, 3])[None, :] - inter
    return inter / union


def clip_polygon(subject: ConvexPolygon2D, clip: ConvexPolygon2D) -> ConvexPolygon2D:
    """Intersection of two convex CCW polygons (Sutherland-Hodgman)."""
    if subject.is_empty or clip.is_empty:
        return ConvexPolygon2D()
    if len(subject) + 2 * len(clip) > 32:
        verts = kernels.python_impl.clip(subject.vertices, clip.vertices)
    else:
        verts = kernels.clip(subject.vertices, clip.vertices)
    return ConvexPolygon2D(tuple(verts))


def polygon_area(p: ConvexPolygon2D) -> float:
    return _shoelace(p.vertices)


def iou3d(a: Box3D, b: Box3D) -> float:
    """Exact IoU of two oriented boxes: clipped footprint area times vertical overlap."""
    dy = min(a.y + a.h, b.y + b.h) - max(a.y, b.y)
    if dy <= 0:
        return 0.0
    inter = polygon_area(clip_polygon(a.footprint(), b.footprint())) * dy
    if inter <= 0:
        return 0.0
    return min(1.0, inter / (a.volume + b.volume - inter))


def iou3d_aligned(a: Box3D, b: Box3D) -> float:
    """IoU with ``b`` re-oriented to ``a``'s yaw; cheap association-cost proxy."""
    return float(kernels.iou3d_aligned_matrix(a.to_array()[None], b.to_array()[None])[0, 0])


def iou3d_matrix(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Exact pairwise oriented IoU for ``(K, 7)`` and ``(N, 7)`` box arrays."""
    a = np.asarray(a, dtype=float).reshape(-1, 7)
    b = np.asarray(b, dtype=float).reshape(-1, 7)
    K, N = len(a), len(b)
    if K == 0 or N == 0:
        return np.zeros((K, N))
    ia, ib = np.meshgrid(np.arange(K), np.arange(N), indexing="ij")
    return kernels.iou3d_batch(a[ia.ravel()], b[ib.ravel()]).reshape(K, N)
