"""Frames, poses, the pinhole camera and the rigid transforms tying the sensors together.

Conventions
-----------
* LiDAR frame: x forward, y left, z up.
* Camera frame: z along the optical axis, x to the right of the image, y down.
* Bearings are counterclockwise-positive (to the robot's left) in both sensors,
  wrapped to (-pi, pi].
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

TWO_PI = 2.0 * math.pi


def wrap_angle(a):
    """Wrap an angle (scalar or array) to (-pi, pi]."""
    if isinstance(a, np.ndarray):
        return -np.mod(-a + math.pi, TWO_PI) + math.pi
    return -math.fmod(math.fmod(-a + math.pi, TWO_PI) + TWO_PI, TWO_PI) + math.pi


@dataclass(frozen=True)
class CameraIntrinsics:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise ValueError("focal lengths must be positive")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise ValueError("principal point must lie inside the sensor")

    @classmethod
    def from_hfov(cls, width: int, height: int, hfov_deg: float) -> "CameraIntrinsics":
        f = (width / 2.0) / math.tan(math.radians(hfov_deg) / 2.0)
        return cls(fx=f, fy=f, cx=width / 2.0, cy=height / 2.0, width=width, height=height)

    def contains(self, u, v):
        return (u >= 0) & (u < self.width) & (v >= 0) & (v < self.height)


@dataclass(frozen=True)
class Pose2D:
    x: float
    y: float
    yaw: float

    def __post_init__(self):
        object.__setattr__(self, "yaw", wrap_angle(float(self.yaw)))

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y, self.yaw])

    def is_finite(self) -> bool:
        return all(math.isfinite(c) for c in (self.x, self.y, self.yaw))


def _as_rotation(r) -> np.ndarray:
    r = np.asarray(r, dtype=float)
    if r.shape != (3, 3):
        raise ValueError("rotation must be 3x3")
    if np.linalg.norm(r @ r.T - np.eye(3)) >= 1e-9:
        raise ValueError("rotation is not orthonormal")
    return r


def rot_z(yaw: float) -> np.ndarray:
    c, s = math.cos(yaw), math.sin(yaw)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


# Camera axes (right, down, forward) expressed in the LiDAR frame when the
# optical axis is aligned with the LiDAR x axis.
CAMERA_ALIGNED = np.array([[0.0, 0.0, 1.0], [-1.0, 0.0, 0.0], [0.0, -1.0, 0.0]])


@dataclass(frozen=True)
class Extrinsics:
    """Camera->LiDAR and LiDAR->body rigid transforms.

    ``p_lidar = cam_rot @ p_cam + cam_trans`` and
    ``p_body = lidar_rot @ p_lidar + lidar_trans``.
    """

    cam_rot: np.ndarray = field(default_factory=lambda: CAMERA_ALIGNED.copy())
    cam_trans: np.ndarray = field(default_factory=lambda: np.array([0.0, 0.0, -0.08]))
    lidar_rot: np.ndarray = field(default_factory=lambda: np.eye(3))
    lidar_trans: np.ndarray = field(default_factory=lambda: np.array([0.0, 0.0, 0.7]))

    def __post_init__(self):
        object.__setattr__(self, "cam_rot", _as_rotation(self.cam_rot))
        object.__setattr__(self, "lidar_rot", _as_rotation(self.lidar_rot))
        for name in ("cam_trans", "lidar_trans"):
            t = np.asarray(getattr(self, name), dtype=float).reshape(3)
            object.__setattr__(self, name, t)

    @classmethod
    def identity(cls) -> "Extrinsics":
        return cls(cam_rot=CAMERA_ALIGNED, cam_trans=np.zeros(3),
                   lidar_rot=np.eye(3), lidar_trans=np.zeros(3))

    def __eq__(self, other):
        if not isinstance(other, Extrinsics):
            return NotImplemented
        return all(np.array_equal(getattr(self, k), getattr(other, k))
                   for k in ("cam_rot", "cam_trans", "lidar_rot", "lidar_trans"))

    def lidar_to_camera(self, pts: np.ndarray) -> np.ndarray:
        """Map (N, 3) LiDAR-frame points into the camera frame."""
        return (np.asarray(pts, dtype=float) - self.cam_trans) @ self.cam_rot


@dataclass(frozen=True)
class Bearing:
    theta: float

    def __post_init__(self):
        object.__setattr__(self, "theta", wrap_angle(float(self.theta)))

    def __float__(self):
        return self.theta


def pixel_bearing(u: float, v: float, intr: CameraIntrinsics) -> Bearing:
    """Azimuth of an image point; ``v`` does not enter (azimuth only)."""
    if not intr.contains(u, v):
        raise ValueError(f"pixel ({u}, {v}) outside {intr.width}x{intr.height} sensor")
    return Bearing(math.atan((intr.cx - u) / intr.fx))


def pixel_bearings(u, intr: CameraIntrinsics) -> np.ndarray:
    return np.arctan((intr.cx - np.asarray(u, dtype=float)) / intr.fx)


def lidar_bearing(x: float, y: float) -> Bearing:
    if x == 0 and y == 0:
        raise ValueError("bearing of the zero vector is undefined")
    return Bearing(math.atan2(y, x))


def lidar_to_world(p_l: Sequence[float], robot: Pose2D, ext: Extrinsics) -> tuple[float, float]:
    """Planar position in the world frame of a LiDAR-frame point; z is dropped."""
    p = np.asarray(p_l, dtype=float).reshape(3)
    if not (np.all(np.isfinite(p)) and robot.is_finite()):
        raise ValueError("non-finite input to lidar_to_world")
    b = ext.lidar_rot @ p + ext.lidar_trans
    c, s = math.cos(robot.yaw), math.sin(robot.yaw)
    return (robot.x + c * b[0] - s * b[1], robot.y + s * b[0] + c * b[1])


def world_to_lidar_xy(pts_w: np.ndarray, robot: Pose2D, ext: Extrinsics) -> np.ndarray:
    """Inverse of the planar part of ``lidar_to_world`` for (N, 2) points.

    Only valid for LiDAR mounts whose rotation is a pure yaw.
    """
    pts_w = np.atleast_2d(np.asarray(pts_w, dtype=float))
    c, s = math.cos(robot.yaw), math.sin(robot.yaw)
    dx = pts_w[:, 0] - robot.x
    dy = pts_w[:, 1] - robot.y
    bx = c * dx + s * dy - ext.lidar_trans[0]
    by = -s * dx + c * dy - ext.lidar_trans[1]
    r = ext.lidar_rot[:2, :2]
    return np.stack([bx, by], axis=1) @ r
