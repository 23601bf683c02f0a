"""Poses, quaternions, boxes, camera projection, and the 12-dim state vector.

Ego-vehicle frame convention: x forward, y left, z up. Quaternions are
stored (w, x, y, z). The camera frame is the usual pinhole one: z forward,
x right, y down.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import BehindCameraError, DegenerateInputError

STATE_DIM = 12  # [t_x, t_y, t_z, q_w, q_x, q_y, q_z, z_0 .. z_4]
N_SHAPE_WEIGHTS = 5


def _vec(x, n):
    a = np.asarray(x, dtype=np.float64)
    if a.shape != (n,):
        raise ValueError(f"expected length-{n} vector, got shape {a.shape}")
    return a


def normalize_quat(q) -> np.ndarray:
    """Return q / ||q||; zero-norm input is a degenerate-input error."""
    q = _vec(q, 4)
    n = np.linalg.norm(q)
    if n < 1e-12:
        raise DegenerateInputError("cannot normalize zero-norm quaternion")
    return q / n


def quat_to_matrix(q) -> np.ndarray:
    """Rotation matrix of a (w, x, y, z) quaternion (renormalized internally)."""
    w, x, y, z = normalize_quat(q)
    return np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
        [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
        [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
    ])


def quat_multiply(a, b) -> np.ndarray:
    aw, ax, ay, az = _vec(a, 4)
    bw, bx, by, bz = _vec(b, 4)
    return np.array([
        aw * bw - ax * bx - ay * by - az * bz,
        aw * bx + ax * bw + ay * bz - az * by,
        aw * by - ax * bz + ay * bw + az * bx,
        aw * bz + ax * by - ay * bx + az * bw,
    ])


def quat_from_axis_angle(axis, angle_rad: float) -> np.ndarray:
    axis = _vec(axis, 3)
    n = np.linalg.norm(axis)
    if n < 1e-12:
        raise DegenerateInputError("zero-norm rotation axis")
    half = 0.5 * angle_rad
    return np.concatenate([[np.cos(half)], np.sin(half) * axis / n])


def quat_from_yaw(yaw_rad: float) -> np.ndarray:
    """Rotation about ego z (up)."""
    return np.array([np.cos(0.5 * yaw_rad), 0.0, 0.0, np.sin(0.5 * yaw_rad)])


@dataclass(frozen=True)
class Pose:
    """Rigid object-to-ego transform: rotate by q, then translate by t."""

    t: np.ndarray
    q: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "t", _vec(self.t, 3))
        object.__setattr__(self, "q", _vec(self.q, 4))

    def normalized(self) -> "Pose":
        return Pose(self.t, normalize_quat(self.q))


IDENTITY_POSE = Pose(np.zeros(3), np.array([1.0, 0.0, 0.0, 0.0]))


def transform_points(pose: Pose, pts) -> np.ndarray:
    """Object-frame points -> ego frame. Accepts (3,) or (N, 3)."""
    pts = np.asarray(pts, dtype=np.float64)
    r = quat_to_matrix(pose.q)
    return pts @ r.T + pose.t


def inverse_transform_points(pose: Pose, pts) -> np.ndarray:
    """Ego-frame points -> object frame."""
    pts = np.asarray(pts, dtype=np.float64)
    r = quat_to_matrix(pose.q)
    return (pts - pose.t) @ r


def transform_point(pose: Pose, p) -> np.ndarray:
    return transform_points(pose, _vec(p, 3))


def inverse_transform_point(pose: Pose, p) -> np.ndarray:
    return inverse_transform_points(pose, _vec(p, 3))


@dataclass(frozen=True)
class BoundingBox3D:
    """Oriented 3D box: ego-frame center, (length, width, height), quaternion."""

    center: np.ndarray
    dims: np.ndarray
    quat: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "center", _vec(self.center, 3))
        object.__setattr__(self, "dims", _vec(self.dims, 3))
        object.__setattr__(self, "quat", _vec(self.quat, 4))
        if np.any(self.dims <= 0):
            raise ValueError(f"box dims must be positive, got {self.dims}")

    @property
    def pose(self) -> Pose:
        return Pose(self.center, self.quat)

    @property
    def volume(self) -> float:
        return float(np.prod(self.dims))


_CORNER_SIGNS = np.array([
    [-1, -1, -1], [-1, -1, 1], [-1, 1, -1], [-1, 1, 1],
    [1, -1, -1], [1, -1, 1], [1, 1, -1], [1, 1, 1],
], dtype=np.float64)


def box_corners(box: BoundingBox3D) -> np.ndarray:
    """The 8 ego-frame corner points, fixed sign order (±l/2, ±w/2, ±h/2)."""
    local = _CORNER_SIGNS * (box.dims / 2.0)
    return transform_points(box.pose, local)


def points_in_box(pts, box: BoundingBox3D, margin: float = 1.0) -> np.ndarray:
    """Boolean mask of ego-frame points inside the margin-scaled box."""
    local = inverse_transform_points(box.pose, pts)
    half = margin * box.dims / 2.0
    return np.all(np.abs(local) <= half, axis=1)


# --- state vector -----------------------------------------------------------

def pack_state(pose: Pose, z) -> np.ndarray:
    """[t, q, z] as a flat 12-vector; exact copies, no normalization."""
    z = _vec(z, N_SHAPE_WEIGHTS)
    return np.concatenate([pose.t, pose.q, z])


def unpack_state(xi) -> tuple[Pose, np.ndarray]:
    xi = _vec(xi, STATE_DIM)
    return Pose(xi[0:3], xi[3:7]), xi[7:12].copy()


def normalize_state(xi) -> np.ndarray:
    """Copy of xi with the quaternion block renormalized; t and z untouched."""
    xi = _vec(xi, STATE_DIM).copy()
    xi[3:7] = normalize_quat(xi[3:7])
    return xi


# --- camera -----------------------------------------------------------------

@dataclass(frozen=True)
class CameraModel:
    """Pinhole camera: intrinsics plus the rigid ego->camera transform."""

    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int
    T_cam_ego: np.ndarray = field(default_factory=lambda: np.eye(4))

    def __post_init__(self):
        t = np.asarray(self.T_cam_ego, dtype=np.float64)
        if t.shape != (4, 4):
            raise ValueError("T_cam_ego must be 4x4")
        object.__setattr__(self, "T_cam_ego", t)
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError("focal lengths must be positive")
        if not (0 < self.cx < self.width and 0 < self.cy < self.height):
            raise ValueError("principal point must lie inside the image")

    @property
    def K(self) -> np.ndarray:
        return np.array([[self.fx, 0.0, self.cx],
                         [0.0, self.fy, self.cy],
                         [0.0, 0.0, 1.0]])

    @property
    def R(self) -> np.ndarray:
        return self.T_cam_ego[:3, :3]

    @property
    def t(self) -> np.ndarray:
        return self.T_cam_ego[:3, 3]

    def ego_to_cam(self, pts) -> np.ndarray:
        return np.asarray(pts, dtype=np.float64) @ self.R.T + self.t

    def cam_to_ego(self, pts) -> np.ndarray:
        return (np.asarray(pts, dtype=np.float64) - self.t) @ self.R

    def position(self) -> np.ndarray:
        """Camera center in the ego frame."""
        return -self.R.T @ self.t

    def pixel_ray_dir(self, u, v) -> np.ndarray:
        """Unit camera-frame direction(s) through pixel coordinates (u, v)."""
        u = np.asarray(u, dtype=np.float64)
        v = np.asarray(v, dtype=np.float64)
        d = np.stack([(u - self.cx) / self.fx,
                      (v - self.cy) / self.fy,
                      np.ones_like(u)], axis=-1)
        return d / np.linalg.norm(d, axis=-1, keepdims=True)


def project_pixel(cam: CameraModel, p_cam) -> tuple[float, float]:
    """Camera-frame point -> pixel (u, v); depth must exceed 1e-6 m."""
    p = _vec(p_cam, 3)
    if p[2] <= 1e-6:
        raise BehindCameraError(f"point depth {p[2]:.3g} not in front of camera")
    return (cam.fx * p[0] / p[2] + cam.cx, cam.fy * p[1] / p[2] + cam.cy)


def project_pixels(cam: CameraModel, pts_cam) -> np.ndarray:
    """Vectorized projection; caller guarantees positive depths."""
    p = np.atleast_2d(np.asarray(pts_cam, dtype=np.float64))
    return np.stack([cam.fx * p[:, 0] / p[:, 2] + cam.cx,
                     cam.fy * p[:, 1] / p[:, 2] + cam.cy], axis=1)


def make_forward_camera(position, fx=500.0, fy=500.0, cx=320.0, cy=240.0,
                        width=640, height=480) -> CameraModel:
    """Camera at `position` (ego frame) looking along ego +x."""
    # camera axes in ego coordinates: x_cam = -y_ego, y_cam = -z_ego, z_cam = +x_ego
    r = np.array([[0.0, -1.0, 0.0],
                  [0.0, 0.0, -1.0],
                  [1.0, 0.0, 0.0]])
    t = -r @ _vec(position, 3)
    m = np.eye(4)
    m[:3, :3] = r
    m[:3, 3] = t
    return CameraModel(fx, fy, cx, cy, width, height, m)
