"""Pinhole camera math and coordinate-system transforms.

Conventions used throughout the package:

* WCS is right-handed, ``z`` up, ground plane at ``z = 0``.
* CCS has ``x`` right, ``y`` down and ``z`` along the optical axis.
* NCS is the CCS rotated about its ``x`` axis by the camera pitch and shifted
  so its origin sits on the ground directly below the optical centre.  Its
  ``y`` axis still points down, so a point at world height ``z`` has
  ``Y_N = -z`` for a zero-roll camera.

Angles are radians and lengths metres.  Every pose container accepts leading
batch axes, i.e. arrays shaped ``(..., J, D)``.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    BehindCamera,
    FrameMismatch,
    GeometryError,
    InvalidCamera,
    NegativeHeight,
    RollTooLarge,
)

# Tolerances live here so tests and callers agree on them.
ORTHONORMAL_TOL = 1e-9
MIN_DEPTH = 1e-6
MAX_ROLL = 0.05
RAY_Z_TOL = 0.0


class Frame(str, enum.Enum):
    WCS = "WCS"
    CCS = "CCS"
    NCS = "NCS"


def _frozen(a, dtype=np.float64):
    arr = np.array(a, dtype=dtype, copy=True)
    arr.setflags(write=False)
    return arr


def _check_frame(frame, expected):
    if Frame(frame) is not Frame(expected):
        raise FrameMismatch(Frame(expected).value, Frame(frame).value)


@dataclass(frozen=True)
class CameraIntrinsics:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        vals = (self.fx, self.fy, self.cx, self.cy)
        if not all(math.isfinite(v) for v in vals):
            raise InvalidCamera(f"non-finite intrinsics {vals}")
        if self.fx <= 0 or self.fy <= 0:
            raise InvalidCamera(f"focal lengths must be positive, got fx={self.fx}, fy={self.fy}")
        if not (0 <= self.cx <= self.width and 0 <= self.cy <= self.height):
            raise InvalidCamera(
                f"principal point ({self.cx}, {self.cy}) outside {self.width}x{self.height} image"
            )

    @property
    def matrix(self):
        return np.array([[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]])

    def replace(self, **kw):
        d = self.to_dict()
        d.update(kw)
        return CameraIntrinsics(**d)

    def to_dict(self):
        return {
            "fx": float(self.fx),
            "fy": float(self.fy),
            "cx": float(self.cx),
            "cy": float(self.cy),
            "width": int(self.width),
            "height": int(self.height),
        }

    @classmethod
    def from_dict(cls, d):
        return cls(**{k: d[k] for k in ("fx", "fy", "cx", "cy", "width", "height")})


@dataclass(frozen=True, eq=False)
class CameraExtrinsics:
    """World-to-camera rigid transform ``P_C = R @ P_W + t``."""

    r_w2c: np.ndarray
    t_w2c: np.ndarray

    def __post_init__(self):
        r = _frozen(self.r_w2c)
        t = _frozen(self.t_w2c).reshape(3)
        t.setflags(write=False)
        if r.shape != (3, 3):
            raise InvalidCamera(f"rotation must be 3x3, got {r.shape}")
        if not (np.all(np.isfinite(r)) and np.all(np.isfinite(t))):
            raise InvalidCamera("non-finite extrinsics")
        if np.linalg.norm(r.T @ r - np.eye(3)) >= ORTHONORMAL_TOL:
            raise InvalidCamera("rotation is not orthonormal")
        if np.linalg.det(r) <= 0:
            raise InvalidCamera("rotation has negative determinant")
        object.__setattr__(self, "r_w2c", r)
        object.__setattr__(self, "t_w2c", t)

    @property
    def r_c2w(self):
        return self.r_w2c.T

    @property
    def center(self):
        """Optical centre in world coordinates, ``-R^-1 t``."""
        return -self.r_w2c.T @ self.t_w2c

    def __eq__(self, other):
        if not isinstance(other, CameraExtrinsics):
            return NotImplemented
        return np.array_equal(self.r_w2c, other.r_w2c) and np.array_equal(self.t_w2c, other.t_w2c)

    def __hash__(self):
        return hash((self.r_w2c.tobytes(), self.t_w2c.tobytes()))

    def to_dict(self):
        return {"r_w2c": self.r_w2c.tolist(), "t_w2c": self.t_w2c.tolist()}

    @classmethod
    def from_dict(cls, d):
        return cls(np.asarray(d["r_w2c"], dtype=np.float64), np.asarray(d["t_w2c"], dtype=np.float64))


@dataclass(frozen=True, eq=False)
class NcsTransform:
    r_c2n: np.ndarray
    t_c2n: np.ndarray
    theta: float
    h: float

    def __post_init__(self):
        object.__setattr__(self, "r_c2n", _frozen(self.r_c2n))
        object.__setattr__(self, "t_c2n", _frozen(self.t_c2n).reshape(3))
        if self.h < 0:
            raise NegativeHeight(self.h)

    @classmethod
    def from_pitch_height(cls, theta, h):
        return cls(pitch_rotation(theta), np.array([0.0, -h, 0.0]), float(theta), float(h))

    @classmethod
    def identity(cls):
        return cls.from_pitch_height(0.0, 0.0)


@dataclass(frozen=True, eq=False)
class Pose2D:
    """Pixel keypoints, shape ``(..., J, 2)``."""

    xy: np.ndarray

    def __post_init__(self):
        xy = _frozen(self.xy)
        if xy.ndim < 2 or xy.shape[-1] != 2:
            raise GeometryError(f"Pose2D expects (..., J, 2), got {xy.shape}")
        object.__setattr__(self, "xy", xy)

    @property
    def num_joints(self):
        return self.xy.shape[-2]


@dataclass(frozen=True, eq=False)
class RayPose:
    """Per-joint rays ``origin + s * direction``.

    In CCS the origin is the optical centre and each direction has ``z == 1``
    (a point at unit depth).  In NCS both are expressed after the rigid
    normalisation, so ``points`` is the NCS image of the unit-depth point.
    """

    directions: np.ndarray
    frame: Frame = Frame.CCS
    origin: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        d = _frozen(self.directions)
        if d.ndim < 2 or d.shape[-1] != 3:
            raise GeometryError(f"RayPose expects (..., J, 3), got {d.shape}")
        frame = Frame(self.frame)
        if frame is Frame.WCS:
            raise FrameMismatch("CCS or NCS", "WCS")
        if frame is Frame.CCS and np.any(np.abs(d[..., 2] - 1.0) > RAY_Z_TOL):
            raise GeometryError("CCS rays must have unit depth (z == 1)")
        object.__setattr__(self, "directions", d)
        object.__setattr__(self, "frame", frame)
        object.__setattr__(self, "origin", _frozen(self.origin).reshape(3))

    @property
    def points(self):
        return self.origin + self.directions

    @property
    def num_joints(self):
        return self.directions.shape[-2]


@dataclass(frozen=True, eq=False)
class Pose3D:
    """Metric keypoints, shape ``(..., J, 3)``, tagged with their frame."""

    xyz: np.ndarray
    frame: Frame
    root: int = 0

    def __post_init__(self):
        xyz = _frozen(self.xyz)
        if xyz.ndim < 2 or xyz.shape[-1] != 3:
            raise GeometryError(f"Pose3D expects (..., J, 3), got {xyz.shape}")
        object.__setattr__(self, "xyz", xyz)
        object.__setattr__(self, "frame", Frame(self.frame))

    @property
    def num_joints(self):
        return self.xyz.shape[-2]

    @property
    def root_position(self):
        return self.xyz[..., self.root, :]

    def with_xyz(self, xyz, frame=None):
        return Pose3D(xyz, self.frame if frame is None else frame, self.root)


# ---------------------------------------------------------------------------
# rotations and rig builders


def pitch_rotation(theta):
    """Rotation about the camera ``x`` axis that removes a pitch of ``theta``."""
    c, s = math.cos(theta), math.sin(theta)
    return np.array([[1.0, 0.0, 0.0], [0.0, c, s], [0.0, -s, c]])


def yaw_rotation(angle):
    """Rotation about world ``z``."""
    c, s = math.cos(angle), math.sin(angle)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def extrinsics_from_pose(position, yaw, pitch):
    """Zero-roll camera at ``position`` whose optical axis has the given yaw and
    pitch (positive pitch looks down)."""
    cp, sp = math.cos(pitch), math.sin(pitch)
    cy, sy = math.cos(yaw), math.sin(yaw)
    forward = np.array([cp * cy, cp * sy, -sp])
    right = np.array([sy, -cy, 0.0])
    down = np.cross(forward, right)
    r = np.stack([right, down, forward])
    position = np.asarray(position, dtype=np.float64)
    return CameraExtrinsics(r, -r @ position)


def look_at(position, target):
    """Zero-roll camera at ``position`` looking at ``target``."""
    position = np.asarray(position, dtype=np.float64)
    v = np.asarray(target, dtype=np.float64) - position
    horiz = math.hypot(v[0], v[1])
    if horiz < 1e-12:
        raise InvalidCamera("look_at direction is vertical; yaw is undefined")
    return extrinsics_from_pose(position, math.atan2(v[1], v[0]), math.atan2(-v[2], horiz))


def orbit_camera(center, rotation, pitch, distance):
    """Camera on a circle about ``center`` looking at it.

    ``rotation`` is the azimuth of the camera around the centre, ``pitch`` the
    downward viewing angle and ``distance`` the camera-to-centre range.  The
    camera sits ``distance * sin(pitch)`` above the centre.
    """
    center = np.asarray(center, dtype=np.float64)
    horiz = distance * math.cos(pitch)
    position = center + np.array(
        [horiz * math.cos(rotation), horiz * math.sin(rotation), distance * math.sin(pitch)]
    )
    return extrinsics_from_pose(position, rotation + math.pi, pitch)


# ---------------------------------------------------------------------------
# extrinsic parameter extraction


def camera_height(extr):
    h = float(extr.center[2])
    if h < 0:
        raise NegativeHeight(h)
    return h


def camera_pitch(extr):
    axis = extr.r_c2w @ np.array([0.0, 0.0, 1.0])
    return math.asin(float(np.clip(-axis[2], -1.0, 1.0)))


def camera_roll(extr):
    """Elevation of the camera ``x`` axis above the ground plane."""
    right = extr.r_c2w[:, 0]
    return math.asin(float(np.clip(right[2], -1.0, 1.0)))


def camera_yaw(extr):
    # The right vector stays horizontal for zero roll, so this is defined even
    # when the optical axis is vertical.
    right = extr.r_c2w[:, 0]
    return math.atan2(right[0], -right[1])


def build_ncs(extr):
    roll = camera_roll(extr)
    if abs(roll) >= MAX_ROLL:
        raise RollTooLarge(roll, MAX_ROLL)
    return NcsTransform.from_pitch_height(camera_pitch(extr), camera_height(extr))


# ---------------------------------------------------------------------------
# projection and intrinsic decoupling


def world_to_camera(p, extr):
    _check_frame(p.frame, Frame.WCS)
    return p.with_xyz(p.xyz @ extr.r_w2c.T + extr.t_w2c, Frame.CCS)


def camera_to_world(p, extr):
    _check_frame(p.frame, Frame.CCS)
    return p.with_xyz((p.xyz - extr.t_w2c) @ extr.r_w2c, Frame.WCS)


def project_camera(p_cam, intr):
    _check_frame(p_cam.frame, Frame.CCS)
    xyz = p_cam.xyz
    z = xyz[..., 2]
    bad = z <= MIN_DEPTH
    if np.any(bad):
        idx = np.argwhere(bad)[0]
        raise BehindCamera(idx[-1], z[tuple(idx)])
    x = intr.fx * (xyz[..., 0] / z) + intr.cx
    y = intr.fy * (xyz[..., 1] / z) + intr.cy
    return Pose2D(np.stack([x, y], axis=-1))


def project(p_world, intr, extr):
    return project_camera(world_to_camera(p_world, extr), intr)


def decouple_intrinsics(p, intr):
    xy = p.xy
    if not np.all(np.isfinite(xy)):
        raise GeometryError("non-finite pixel coordinates")
    x = (xy[..., 0] - intr.cx) / intr.fx
    y = (xy[..., 1] - intr.cy) / intr.fy
    return RayPose(np.stack([x, y, np.ones_like(x)], axis=-1), Frame.CCS)


def recouple_intrinsics(rays, intr):
    """Pixels of CCS unit-depth rays (inverse of :func:`decouple_intrinsics`)."""
    _check_frame(rays.frame, Frame.CCS)
    d = rays.directions
    return Pose2D(np.stack([intr.fx * d[..., 0] + intr.cx, intr.fy * d[..., 1] + intr.cy], axis=-1))


def in_frame(p, intr):
    """Boolean mask over ``p.xy[..., 0]`` of keypoints inside the image."""
    x, y = p.xy[..., 0], p.xy[..., 1]
    return (x >= 0) & (x <= intr.width) & (y >= 0) & (y <= intr.height)


# ---------------------------------------------------------------------------
# normalised coordinate system


def camera_to_normalized(p, ncs):
    if isinstance(p, RayPose):
        _check_frame(p.frame, Frame.CCS)
        return RayPose(p.directions @ ncs.r_c2n.T, Frame.NCS, ncs.r_c2n @ p.origin + ncs.t_c2n)
    _check_frame(p.frame, Frame.CCS)
    return p.with_xyz(p.xyz @ ncs.r_c2n.T + ncs.t_c2n, Frame.NCS)


def normalized_to_camera(p, ncs):
    if isinstance(p, RayPose):
        _check_frame(p.frame, Frame.NCS)
        d = p.directions @ ncs.r_c2n
        # Same rays, rescaled back to exact unit depth.
        return RayPose(d / d[..., 2:3], Frame.CCS, (p.origin - ncs.t_c2n) @ ncs.r_c2n)
    _check_frame(p.frame, Frame.NCS)
    return p.with_xyz((p.xyz - ncs.t_c2n) @ ncs.r_c2n, Frame.CCS)


def world_to_normalized_transform(extr, ncs):
    """``(R_W2N, T_W2N)`` composed from the camera and NCS transforms."""
    r = ncs.r_c2n @ extr.r_w2c
    t = ncs.r_c2n @ extr.t_w2c + ncs.t_c2n
    return r, t


def world_to_normalized(p, extr, ncs):
    _check_frame(p.frame, Frame.WCS)
    r, t = world_to_normalized_transform(extr, ncs)
    return p.with_xyz(p.xyz @ r.T + t, Frame.NCS)


def unnormalize(p, extr, ncs):
    _check_frame(p.frame, Frame.NCS)
    r, t = world_to_normalized_transform(extr, ncs)
    return p.with_xyz((p.xyz - t) @ r, Frame.WCS)
