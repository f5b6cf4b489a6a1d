"""Per-track recursive estimation: constant-velocity prediction and PDA updates.

The 3D state is ``[x, y, z, l, h, w, theta, v_x, v_z]``; ground-plane motion
happens in (x, z). The 2D-only variant tracks ``[cx, cy, w, h, v_x, v_y]`` of
an image box (centre, size, velocity in px/frame).
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import BehindCamera, InvalidBetas, SingularInnovation
from .geometry import Box2D, Box3D, wrap_angle, wrap_angles

STATE_DIM = 9
MEAS3D_DIM = 7
MEAS2D_DIM = 4
THETA = 6
SIZE_IDX = (3, 4, 5)
MIN_SIZE = 1e-3
MAX_COND = 1e12
JACOBIAN_STEP = 1e-5
MIN_DEPTH = 0.01

# local corner offsets in units of (l, h, w); bottom face first
_CORNER_SIGNS = np.array(
    [
        [0.5, 0.0, 0.5],
        [-0.5, 0.0, 0.5],
        [-0.5, 0.0, -0.5],
        [0.5, 0.0, -0.5],
        [0.5, 1.0, 0.5],
        [-0.5, 1.0, 0.5],
        [-0.5, 1.0, -0.5],
        [0.5, 1.0, -0.5],
    ]
)


@dataclass
class NoiseConfig:
    """Process/measurement noise diagonals and clutter model.

    ``q3`` follows the 3D state order, ``r3`` the 3D measurement order
    ``[x, y, z, l, h, w, theta]``, ``r2`` the image box ``(u, v, w, h)``,
    ``q2`` the 2D-only state order.
    """

    q3: np.ndarray = field(
        default_factory=lambda: np.array([0.05, 0.05, 0.05, 0.01, 0.01, 0.01, 0.01, 0.1, 0.1])
    )
    r3: np.ndarray = field(default_factory=lambda: np.array([0.1, 0.1, 0.1, 0.05, 0.05, 0.05, 0.05]))
    r2: np.ndarray = field(default_factory=lambda: np.full(4, 25.0))
    q2: np.ndarray = field(default_factory=lambda: np.array([4.0, 4.0, 4.0, 4.0, 1.0, 1.0]))
    p_d: float = 0.9
    clutter: float = 1.0
    init_vel_var: float = 1.0

    def __post_init__(self):
        self.q3 = np.asarray(self.q3, dtype=float).reshape(STATE_DIM)
        self.r3 = np.asarray(self.r3, dtype=float).reshape(MEAS3D_DIM)
        self.r2 = np.asarray(self.r2, dtype=float).reshape(MEAS2D_DIM)
        self.q2 = np.asarray(self.q2, dtype=float).reshape(6)
        for name in ("q3", "r3", "r2", "q2"):
            if np.any(getattr(self, name) <= 0):
                raise ValueError(f"{name} variances must be positive")
        if not 0 < self.p_d <= 1:
            raise ValueError("p_d must lie in (0, 1]")
        if self.clutter < 0:
            raise ValueError("clutter must be non-negative")
        if self.init_vel_var <= 0:
            raise ValueError("init_vel_var must be positive")


@dataclass
class CameraModel:
    """Pinhole camera; ``rotation``/``translation`` map tracking frame to camera frame."""

    fx: float
    fy: float
    cx: float
    cy: float
    rotation: np.ndarray = field(default_factory=lambda: np.diag([-1.0, -1.0, 1.0]))
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        self.rotation = np.asarray(self.rotation, dtype=float).reshape(3, 3)
        self.translation = np.asarray(self.translation, dtype=float).reshape(3)
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError("focal lengths must be positive")
        if np.abs(self.rotation.T @ self.rotation - np.eye(3)).max() > 1e-9:
            raise ValueError("extrinsic rotation is not orthonormal")

    def to_camera(self, pts: np.ndarray) -> np.ndarray:
        return pts @ self.rotation.T + self.translation

    def ray(self, u: float, v: float) -> np.ndarray:
        """Unit viewing direction through pixel (u, v), in the tracking frame."""
        d = np.array([(u - self.cx) / self.fx, (v - self.cy) / self.fy, 1.0])
        d = self.rotation.T @ d
        return d / np.linalg.norm(d)

    @property
    def center(self) -> np.ndarray:
        return -self.rotation.T @ self.translation


@dataclass
class TrackState3D:
    mean: np.ndarray
    covariance: np.ndarray

    def __post_init__(self):
        self.mean = np.asarray(self.mean, dtype=float).reshape(STATE_DIM)
        self.covariance = np.asarray(self.covariance, dtype=float).reshape(STATE_DIM, STATE_DIM)

    def box(self) -> Box3D:
        x, y, z, l, h, w, th = self.mean[:7]
        return Box3D(x, y, z, l, w, h, th)

    def copy(self) -> "TrackState3D":
        return TrackState3D(self.mean.copy(), self.covariance.copy())


@dataclass
class TrackState2D:
    mean: np.ndarray
    covariance: np.ndarray

    def __post_init__(self):
        self.mean = np.asarray(self.mean, dtype=float).reshape(6)
        self.covariance = np.asarray(self.covariance, dtype=float).reshape(6, 6)

    def box(self) -> Box2D:
        cx, cy, w, h = self.mean[:4]
        return Box2D(cx - 0.5 * w, cy - 0.5 * h, w, h)

    def copy(self) -> "TrackState2D":
        return TrackState2D(self.mean.copy(), self.covariance.copy())


def box3d_measurement(box: Box3D) -> np.ndarray:
    """3D box as a measurement vector in state order ``[x, y, z, l, h, w, theta]``."""
    return np.array([box.x, box.y, box.z, box.l, box.h, box.w, box.theta])


def box2d_center_form(box: Box2D) -> np.ndarray:
    return np.array([box.u + 0.5 * box.w, box.v + 0.5 * box.h, box.w, box.h])


def is_spd(P: np.ndarray) -> bool:
    try:
        np.linalg.cholesky(P)
    except np.linalg.LinAlgError:
        return False
    return True


# --------------------------------------------------------------------------
# construction


def init_state(box: Box3D, noise: NoiseConfig) -> TrackState3D:
    """Track state seeded from a first 3D detection, at rest."""
    mean = np.zeros(STATE_DIM)
    mean[:7] = box3d_measurement(box)
    cov = np.diag(np.concatenate([noise.r3, [noise.init_vel_var, noise.init_vel_var]]))
    return TrackState3D(mean, cov)


def init_state_from_ray(
    box: Box2D,
    cam: CameraModel,
    noise: NoiseConfig,
    *,
    range_m: float = 5.0,
    depth_var: float = 25.0,
    size: Sequence[float] = (0.6, 1.7, 0.6),
) -> TrackState3D:
    """Track state for a detection with no 3D box: placed on the viewing ray at ``range_m``.

    ``size`` is ``(l, h, w)``. Uncertainty along the ray is ``depth_var``.
    """
    u, v = box.center
    r = cam.ray(u, v)
    centre = cam.center + range_m * r
    l, h, w = size
    mean = np.zeros(STATE_DIM)
    mean[:7] = [centre[0], centre[1] - 0.5 * h, centre[2], l, h, w, 0.0]
    lat = noise.r3[0]
    pos_cov = lat * np.eye(3) + (depth_var - lat) * np.outer(r, r)
    cov = np.zeros((STATE_DIM, STATE_DIM))
    cov[:3, :3] = pos_cov
    cov[3:6, 3:6] = np.diag(noise.r3[3:6]) * 4.0
    cov[THETA, THETA] = 1.0
    cov[7, 7] = cov[8, 8] = noise.init_vel_var
    return TrackState3D(mean, cov)


def init_state_2d(box: Box2D, noise: NoiseConfig) -> TrackState2D:
    mean = np.zeros(6)
    mean[:4] = box2d_center_form(box)
    cov = np.diag(np.concatenate([noise.r2, [noise.init_vel_var * 100.0] * 2]))
    return TrackState2D(mean, cov)


# --------------------------------------------------------------------------
# prediction


def transition_matrix(dt: float) -> np.ndarray:
    F = np.eye(STATE_DIM)
    F[0, 7] = dt
    F[2, 8] = dt
    return F


def predict(state: TrackState3D, dt: float, noise: NoiseConfig) -> TrackState3D:
    if dt <= 0:
        raise ValueError("dt must be positive")
    mean = state.mean.copy()
    mean[0] += mean[7] * dt
    mean[2] += mean[8] * dt
    F = transition_matrix(dt)
    P = F @ state.covariance @ F.T + np.diag(noise.q3)
    return TrackState3D(mean, 0.5 * (P + P.T))


def predict_2d(state: TrackState2D, dt: float, noise: NoiseConfig) -> TrackState2D:
    """Constant-velocity step for the image-box state; ``dt`` in frames."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    F = np.eye(6)
    F[0, 4] = F[1, 5] = dt
    P = F @ state.covariance @ F.T + np.diag(noise.q2)
    return TrackState2D(F @ state.mean, 0.5 * (P + P.T))


# --------------------------------------------------------------------------
# measurement models


def box_corners(means: np.ndarray) -> np.ndarray:
    """Corners of the boxes encoded by 3D state rows, shape ``(..., 8, 3)``."""
    means = np.asarray(means, dtype=float)
    x, y, z, l, h, w, th = (means[..., k, None] for k in range(7))
    a = _CORNER_SIGNS[:, 0] * l
    b = _CORNER_SIGNS[:, 2] * w
    c, s = np.cos(th), np.sin(th)
    out = np.empty(means.shape[:-1] + (8, 3))
    out[..., 0] = x + c * a - s * b
    out[..., 1] = y + _CORNER_SIGNS[:, 1] * h
    out[..., 2] = z + s * a + c * b
    return out


def project_means(means: np.ndarray, cam: CameraModel) -> tuple[np.ndarray, np.ndarray]:
    """Tight image boxes ``(..., 4)`` of projected cuboids plus min corner depth ``(...)``."""
    pc = box_corners(means) @ cam.rotation.T + cam.translation
    depth = pc[..., 2]
    safe = np.where(depth > MIN_DEPTH, depth, MIN_DEPTH)
    u = cam.fx * pc[..., 0] / safe + cam.cx
    v = cam.fy * pc[..., 1] / safe + cam.cy
    u0, u1 = u.min(axis=-1), u.max(axis=-1)
    v0, v1 = v.min(axis=-1), v.max(axis=-1)
    return np.stack([u0, v0, u1 - u0, v1 - v0], axis=-1), depth.min(axis=-1)


def project_to_image(state: TrackState3D, cam: CameraModel) -> Box2D:
    box, depth = project_means(state.mean, cam)
    if depth <= MIN_DEPTH:
        raise BehindCamera(f"box corner at depth {depth:.3f} m")
    return Box2D.from_array(box)


def projection_jacobian(
    means: np.ndarray, cam: CameraModel, step: float = JACOBIAN_STEP
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Central-difference Jacobian of the projection for a batch of states.

    Returns ``(boxes (K, 4), jacobians (K, 4, 9), valid (K,))``; ``valid`` is
    False for states with a corner behind the camera. Velocities do not enter
    the projection, so their columns are zero.
    """
    means = np.atleast_2d(np.asarray(means, dtype=float))
    K = means.shape[0]
    pert = np.repeat(means[:, None, :], 1 + 2 * 7, axis=1)
    for k in range(7):
        pert[:, 1 + 2 * k, k] += step
        pert[:, 2 + 2 * k, k] -= step
    boxes, depth = project_means(pert, cam)
    J = np.zeros((K, MEAS2D_DIM, STATE_DIM))
    J[:, :, :7] = ((boxes[:, 1::2, :] - boxes[:, 2::2, :]) / (2 * step)).transpose(0, 2, 1)
    valid = depth.min(axis=1) > MIN_DEPTH
    return boxes[:, 0, :], J, valid


H3 = np.hstack([np.eye(MEAS3D_DIM), np.zeros((MEAS3D_DIM, 2))])


class Measurement3D:
    """Linear model: the first seven state entries are observed directly."""

    dim = MEAS3D_DIM
    angle_index = THETA
    H = H3

    def predict(self, state):
        return state.mean[:7].copy(), self.H

    def noise(self, noise: NoiseConfig) -> np.ndarray:
        return np.diag(noise.r3)

    def vector(self, det) -> np.ndarray:
        return box3d_measurement(det) if isinstance(det, Box3D) else np.asarray(det, dtype=float)


class ProjectionMeasurement:
    """Image box of the projected cuboid; linearised numerically for the EKF."""

    dim = MEAS2D_DIM
    angle_index = None

    def __init__(self, cam: CameraModel, step: float = JACOBIAN_STEP):
        self.cam = cam
        self.step = step

    def predict(self, state):
        boxes, J, valid = projection_jacobian(state.mean, self.cam, self.step)
        if not valid[0]:
            raise BehindCamera("box corner at or behind the camera plane")
        return boxes[0], J[0]

    def noise(self, noise: NoiseConfig) -> np.ndarray:
        return np.diag(noise.r2)

    def vector(self, det) -> np.ndarray:
        return det.to_array() if isinstance(det, Box2D) else np.asarray(det, dtype=float)


class BoxMeasurement2D:
    """2D-only mode: the box (centre form) is the first four state entries."""

    dim = MEAS2D_DIM
    angle_index = None
    H = np.hstack([np.eye(4), np.zeros((4, 2))])

    def predict(self, state):
        return state.mean[:4].copy(), self.H

    def noise(self, noise: NoiseConfig) -> np.ndarray:
        return np.diag(noise.r2)

    def vector(self, det) -> np.ndarray:
        return box2d_center_form(det) if isinstance(det, Box2D) else np.asarray(det, dtype=float)


def innovation_covariance(state, model, noise: NoiseConfig) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    zhat, H = model.predict(state)
    S = H @ state.covariance @ H.T + model.noise(noise)
    return zhat, H, 0.5 * (S + S.T)


def residual(z: np.ndarray, zhat: np.ndarray, angle_index=None) -> np.ndarray:
    nu = np.asarray(z, dtype=float) - zhat
    if angle_index is not None:
        nu[..., angle_index] = wrap_angles(nu[..., angle_index])
    return nu


def mahalanobis_sq_from(innovation, S) -> float:
    """Squared Mahalanobis length of ``innovation`` under covariance ``S``."""
    nu = np.atleast_1d(np.asarray(innovation, dtype=float))
    S = np.atleast_2d(np.asarray(S, dtype=float))
    if np.linalg.cond(S) > MAX_COND:
        raise SingularInnovation("innovation covariance is ill-conditioned")
    return float(nu @ np.linalg.solve(S, nu))


def mahalanobis_sq(state, measurement, model, noise: NoiseConfig) -> float:
    zhat, _, S = innovation_covariance(state, model, noise)
    return mahalanobis_sq_from(residual(model.vector(measurement), zhat, model.angle_index), S)


# --------------------------------------------------------------------------
# PDA updates


def check_betas(betas, n_detections: int) -> np.ndarray:
    b = np.asarray(betas, dtype=float).ravel()
    if b.shape[0] != n_detections + 1:
        raise InvalidBetas(f"expected {n_detections + 1} association weights, got {b.shape[0]}")
    if np.any(b < 0) or abs(b.sum() - 1.0) > 1e-6:
        raise InvalidBetas("association weights must be non-negative and sum to one")
    return b


def _pda(mean, P, zs, zhat, H, R, betas, angle_index):
    b0 = betas[0]
    if b0 >= 1.0 or zs.shape[0] == 0:
        return mean.copy(), P.copy()
    S = H @ P @ H.T + R
    S = 0.5 * (S + S.T)
    PHt = P @ H.T
    K = np.linalg.solve(S, PHt.T).T
    nus = residual(zs, zhat, angle_index)
    w = betas[1:]
    nu = w @ nus
    spread = (nus * w[:, None]).T @ nus - np.outer(nu, nu)
    Pc = P - K @ S @ K.T
    new_P = b0 * P + (1.0 - b0) * Pc + K @ spread @ K.T
    return mean + K @ nu, 0.5 * (new_P + new_P.T)


def pda_batch(means, covs, zs, zhat, H, R, betas, angle_index=None):
    """Vectorised PDA over ``T`` tracks sharing a padded detection axis.

    ``zs`` is ``(T, J, m)``, ``zhat`` ``(T, m)``, ``H`` ``(m, n)`` or ``(T, m, n)``
    and ``betas`` ``(T, J + 1)``; padded detections carry weight zero. Returns
    new means and covariances; rows with ``betas[:, 0] >= 1`` are left unchanged.
    """
    means = np.asarray(means, dtype=float)
    covs = np.asarray(covs, dtype=float)
    betas = np.asarray(betas, dtype=float)
    H = np.broadcast_to(H, (len(means),) + np.shape(H)[-2:])
    Ht = H.transpose(0, 2, 1)
    PHt = covs @ Ht
    S = H @ PHt + R
    S = 0.5 * (S + S.transpose(0, 2, 1))
    K = np.linalg.solve(S, PHt.transpose(0, 2, 1)).transpose(0, 2, 1)
    nus = residual(zs, zhat[:, None, :], angle_index)
    b0 = betas[:, 0]
    w = betas[:, 1:]
    nu = np.einsum("tj,tjm->tm", w, nus)
    spread = np.einsum("tj,tja,tjb->tab", w, nus, nus) - nu[:, :, None] * nu[:, None, :]
    KS = K @ S
    Pc = covs - KS @ K.transpose(0, 2, 1)
    new_P = b0[:, None, None] * covs + (1.0 - b0)[:, None, None] * Pc + K @ spread @ K.transpose(0, 2, 1)
    new_P = 0.5 * (new_P + new_P.transpose(0, 2, 1))
    new_mean = means + np.einsum("tnm,tm->tn", K, nu)
    skip = b0 >= 1.0
    new_mean[skip] = means[skip]
    new_P[skip] = covs[skip]
    return new_mean, new_P


def finish_3d_batch(means: np.ndarray) -> np.ndarray:
    """Wrap yaw and clamp sizes in place on a ``(T, 9)`` array of means."""
    means[:, THETA] = wrap_angles(means[:, THETA])
    idx = list(SIZE_IDX)
    means[:, idx] = np.maximum(means[:, idx], MIN_SIZE)
    return means


def _finish_3d(mean, P) -> TrackState3D:
    mean[THETA] = wrap_angle(mean[THETA])
    for k in SIZE_IDX:
        if mean[k] < MIN_SIZE:
            mean[k] = MIN_SIZE
    return TrackState3D(mean, P)


def pda_update_3d(
    state: TrackState3D, detections: Sequence, betas, noise: NoiseConfig
) -> TrackState3D:
    """PDAF update from 3D boxes; ``betas[0]`` is the miss weight."""
    b = check_betas(betas, len(detections))
    model = Measurement3D()
    if len(detections) == 0 or b[0] >= 1.0:
        return state.copy()
    zs = np.array([model.vector(d) for d in detections])
    mean, P = _pda(state.mean, state.covariance, zs, state.mean[:7], model.H, model.noise(noise), b, THETA)
    return _finish_3d(mean, P)


def pda_update_2d(
    state: TrackState3D,
    detections: Sequence[Box2D],
    betas,
    cam: CameraModel,
    noise: NoiseConfig,
    *,
    step: float = JACOBIAN_STEP,
) -> TrackState3D:
    """PDA-EKF update from image boxes through the cuboid projection."""
    b = check_betas(betas, len(detections))
    if len(detections) == 0 or b[0] >= 1.0:
        return state.copy()
    model = ProjectionMeasurement(cam, step)
    zhat, H = model.predict(state)
    zs = np.array([model.vector(d) for d in detections])
    return pda_update_linearized(state, zs, b, zhat, H, model.noise(noise))


def pda_update_linearized(
    state: TrackState3D, zs: np.ndarray, betas: np.ndarray, zhat: np.ndarray, H: np.ndarray, R: np.ndarray
) -> TrackState3D:
    """PDA update of a 3D state with a measurement model already linearised at ``state``.

    ``zs`` holds one measurement vector per row and ``betas`` is already validated.
    """
    mean, P = _pda(state.mean, state.covariance, np.asarray(zs, dtype=float), zhat, H, R, betas, None)
    return _finish_3d(mean, P)


def update_2d_only_mode(
    state: TrackState2D, detections: Sequence[Box2D], betas, noise: NoiseConfig
) -> TrackState2D:
    b = check_betas(betas, len(detections))
    if len(detections) == 0 or b[0] >= 1.0:
        return state.copy()
    model = BoxMeasurement2D()
    zs = np.array([model.vector(d) for d in detections])
    mean, P = _pda(state.mean, state.covariance, zs, state.mean[:4], model.H, model.noise(noise), b, None)
    mean[2] = max(mean[2], MIN_SIZE)
    mean[3] = max(mean[3], MIN_SIZE)
    return TrackState2D(mean, P)


def nees(state: TrackState3D, truth: np.ndarray) -> float:
    """Normalised estimation error squared against a true state vector."""
    err = np.asarray(truth, dtype=float) - state.mean
    err[THETA] = wrap_angle(err[THETA])
    return float(err @ np.linalg.solve(state.covariance, err))
