"""Quaternion and rotation utilities shared by the filter, simulator and metrics.

Conventions used throughout the package:

* quaternions are length-4 float arrays, scalar first (w, x, y, z), Hamilton
  product, unit norm after every public operation;
* rotation vectors are angle-axis products (magnitude = rotation angle, rad);
* rotation matrices map body-frame vectors into the map frame, i.e.
  ``v_map = quat_to_rotmat(q) @ v_body``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

QUAT_IDENTITY = np.array([1.0, 0.0, 0.0, 0.0])

# Below this angle (rad) the rotation axis is ill conditioned and half-angle
# terms switch to series expansions.
SMALL_ANGLE = 1e-8


def quat_normalize(q) -> np.ndarray:
    """Scale to unit norm. Raises ValueError for a near-zero quaternion."""
    q = np.asarray(q, dtype=float)
    n = float(np.linalg.norm(q))
    if n < 1e-12:
        raise ValueError("cannot normalize near-zero quaternion")
    return q / n


def quat_canonical(q) -> np.ndarray:
    """Unit quaternion with w >= 0; q and -q describe the same rotation."""
    q = quat_normalize(q)
    return -q if q[0] < 0.0 else q


def quat_conjugate(q) -> np.ndarray:
    q = np.asarray(q, dtype=float)
    return np.array([q[0], -q[1], -q[2], -q[3]])


def quat_multiply(a, b) -> np.ndarray:
    """Hamilton product a * b, renormalized."""
    w1, x1, y1, z1 = a
    w2, x2, y2, z2 = b
    return quat_normalize([
        w1 * w2 - x1 * x2 - y1 * y2 - z1 * z2,
        w1 * x2 + x1 * w2 + y1 * z2 - z1 * y2,
        w1 * y2 - x1 * z2 + y1 * w2 + z1 * x2,
        w1 * z2 + x1 * y2 - y1 * x2 + z1 * w2,
    ])


def quat_from_rotvec(v) -> np.ndarray:
    """Unit quaternion (cos(t/2), sin(t/2) * axis) for a rotation vector."""
    v = np.asarray(v, dtype=float)
    angle = float(np.linalg.norm(v))
    if angle < SMALL_ANGLE:
        # series for cos(t/2) and sin(t/2)/t, avoids 0/0 at t = 0
        w = 1.0 - angle * angle / 8.0
        xyz = v * (0.5 - angle * angle / 48.0)
    else:
        w = math.cos(0.5 * angle)
        xyz = v * (math.sin(0.5 * angle) / angle)
    return quat_normalize([w, xyz[0], xyz[1], xyz[2]])


def quat_to_rotvec(q) -> np.ndarray:
    """Rotation vector of q, magnitude in [0, pi]."""
    q = quat_canonical(q)
    s = float(np.linalg.norm(q[1:]))
    if s < SMALL_ANGLE:
        # w ~ 1: first-order angle * axis
        return 2.0 * q[1:]
    angle = 2.0 * math.atan2(s, q[0])
    return q[1:] * (angle / s)


def quat_to_rotmat(q) -> np.ndarray:
    """Orthonormal rotation matrix of a unit quaternion (body to map)."""
    w, x, y, z = quat_normalize(q)
    xx, yy, zz = x * x, y * y, z * z
    wx, wy, wz = w * x, w * y, w * z
    xy, xz, yz = x * y, x * z, y * z
    return np.array([
        [1.0 - 2.0 * (yy + zz), 2.0 * (xy - wz), 2.0 * (xz + wy)],
        [2.0 * (xy + wz), 1.0 - 2.0 * (xx + zz), 2.0 * (yz - wx)],
        [2.0 * (xz - wy), 2.0 * (yz + wx), 1.0 - 2.0 * (xx + yy)],
    ])


def quat_from_rotmat(m) -> np.ndarray:
    """Quaternion of a rotation matrix (Shepperd branching), sign-canonical."""
    m = np.asarray(m, dtype=float)
    trace = m[0, 0] + m[1, 1] + m[2, 2]
    if trace > 0.0:
        s = math.sqrt(trace + 1.0) * 2.0
        q = [0.25 * s,
             (m[2, 1] - m[1, 2]) / s,
             (m[0, 2] - m[2, 0]) / s,
             (m[1, 0] - m[0, 1]) / s]
    elif m[0, 0] > m[1, 1] and m[0, 0] > m[2, 2]:
        s = math.sqrt(1.0 + m[0, 0] - m[1, 1] - m[2, 2]) * 2.0
        q = [(m[2, 1] - m[1, 2]) / s,
             0.25 * s,
             (m[0, 1] + m[1, 0]) / s,
             (m[0, 2] + m[2, 0]) / s]
    elif m[1, 1] > m[2, 2]:
        s = math.sqrt(1.0 + m[1, 1] - m[0, 0] - m[2, 2]) * 2.0
        q = [(m[0, 2] - m[2, 0]) / s,
             (m[0, 1] + m[1, 0]) / s,
             0.25 * s,
             (m[1, 2] + m[2, 1]) / s]
    else:
        s = math.sqrt(1.0 + m[2, 2] - m[0, 0] - m[1, 1]) * 2.0
        q = [(m[1, 0] - m[0, 1]) / s,
             (m[0, 2] + m[2, 0]) / s,
             (m[1, 2] + m[2, 1]) / s,
             0.25 * s]
    return quat_canonical(q)


def rotate_vector(q, v) -> np.ndarray:
    """Apply the rotation of q to a 3-vector (body frame into map frame)."""
    return quat_to_rotmat(q) @ np.asarray(v, dtype=float)


def skew(a) -> np.ndarray:
    """Matrix M with M @ b == cross(a, b); M.T == -M."""
    ax, ay, az = np.asarray(a, dtype=float)
    return np.array([
        [0.0, -az, ay],
        [az, 0.0, -ax],
        [-ay, ax, 0.0],
    ])


def rotation_angle_between(a, b) -> float:
    """Angle in degrees of the relative rotation between two unit quaternions."""
    rel = quat_multiply(a, quat_conjugate(b))
    w = min(1.0, abs(float(rel[0])))
    return math.degrees(2.0 * math.acos(w))


@dataclass(frozen=True)
class Pose6DoF:
    """Map-frame position plus body-to-map attitude quaternion."""

    p: np.ndarray
    q: np.ndarray

    def __post_init__(self):
        p = np.asarray(self.p, dtype=float).copy()
        if p.shape != (3,) or not np.all(np.isfinite(p)):
            raise ValueError("position must be a finite 3-vector")
        object.__setattr__(self, "p", p)
        object.__setattr__(self, "q", quat_normalize(self.q).copy())
