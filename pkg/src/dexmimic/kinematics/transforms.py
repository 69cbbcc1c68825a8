"""Quaternion and rigid-transform helpers.

Convention everywhere in dexmimic: quaternions are (w, x, y, z) with the
Hamilton product, and are renormalized after every composition. Rotation
vectors (exponential-map parameters) are axis * angle in radians.
"""

from __future__ import annotations

from collections.abc import Sequence
from dataclasses import dataclass, field

import numpy as np

from dexmimic.errors import InvalidInputError

UNIT_TOLERANCE = 1e-6
_SMALL_ANGLE = 1e-6


# ---------------------------------------------------------------------------
# Quaternion algebra
# ---------------------------------------------------------------------------

def quat_normalize(q: Sequence[float] | np.ndarray) -> np.ndarray:
    q = np.asarray(q, dtype=float)
    norm = np.linalg.norm(q)
    if norm == 0.0 or not np.isfinite(norm):
        raise InvalidInputError("cannot normalize a zero or non-finite quaternion")
    return q / norm


def is_unit_quaternion(q: Sequence[float] | np.ndarray, tol: float = UNIT_TOLERANCE) -> bool:
    q = np.asarray(q, dtype=float)
    return q.shape == (4,) and bool(np.all(np.isfinite(q))) and abs(np.linalg.norm(q) - 1.0) <= tol


def require_unit_quaternion(
    q: Sequence[float] | np.ndarray, name: str = "quaternion",
) -> np.ndarray:
    """Return *q* as an array or raise :class:`InvalidInputError` if it is not unit length."""
    arr = np.asarray(q, dtype=float)
    if not is_unit_quaternion(arr):
        raise InvalidInputError(f"{name} must be a unit quaternion (w, x, y, z), got {arr!r}")
    return arr


def quat_multiply(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Hamilton product ``a * b``."""
    w1, x1, y1, z1 = a
    w2, x2, y2, z2 = b
    return np.array([
        w1 * w2 - x1 * x2 - y1 * y2 - z1 * z2,
        w1 * x2 + x1 * w2 + y1 * z2 - z1 * y2,
        w1 * y2 - x1 * z2 + y1 * w2 + z1 * x2,
        w1 * z2 + x1 * y2 - y1 * x2 + z1 * w2,
    ])


def quat_conjugate(q: np.ndarray) -> np.ndarray:
    return np.array([q[0], -q[1], -q[2], -q[3]])


def quat_to_matrix(q: np.ndarray) -> np.ndarray:
    w, x, y, z = q
    return np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
        [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
        [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
    ])


def matrix_to_quat(m: np.ndarray) -> np.ndarray:
    """Rotation matrix to a unit quaternion with non-negative w (Shepperd's method)."""
    trace = m[0, 0] + m[1, 1] + m[2, 2]
    if trace > 0.0:
        s = 2.0 * np.sqrt(trace + 1.0)
        q = np.array([
            0.25 * s,
            (m[2, 1] - m[1, 2]) / s,
            (m[0, 2] - m[2, 0]) / s,
            (m[1, 0] - m[0, 1]) / s,
        ])
    elif m[0, 0] > m[1, 1] and m[0, 0] > m[2, 2]:
        s = 2.0 * np.sqrt(1.0 + m[0, 0] - m[1, 1] - m[2, 2])
        q = np.array([
            (m[2, 1] - m[1, 2]) / s,
            0.25 * s,
            (m[0, 1] + m[1, 0]) / s,
            (m[0, 2] + m[2, 0]) / s,
        ])
    elif m[1, 1] > m[2, 2]:
        s = 2.0 * np.sqrt(1.0 + m[1, 1] - m[0, 0] - m[2, 2])
        q = np.array([
            (m[0, 2] - m[2, 0]) / s,
            (m[0, 1] + m[1, 0]) / s,
            0.25 * s,
            (m[1, 2] + m[2, 1]) / s,
        ])
    else:
        s = 2.0 * np.sqrt(1.0 + m[2, 2] - m[0, 0] - m[1, 1])
        q = np.array([
            (m[1, 0] - m[0, 1]) / s,
            (m[0, 2] + m[2, 0]) / s,
            (m[1, 2] + m[2, 1]) / s,
            0.25 * s,
        ])
    if q[0] < 0.0:
        q = -q
    return quat_normalize(q)


def quat_from_axis_angle(axis: Sequence[float], angle: float) -> np.ndarray:
    axis = np.asarray(axis, dtype=float)
    axis = axis / np.linalg.norm(axis)
    half = 0.5 * angle
    return np.concatenate([[np.cos(half)], np.sin(half) * axis])


def rotate(q: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Rotate one vector or an (N, 3) array of vectors by *q*."""
    return np.asarray(v, dtype=float) @ quat_to_matrix(q).T


def slerp(a: np.ndarray, b: np.ndarray, t: float) -> np.ndarray:
    """Spherical interpolation along the shorter arc.

    Antipodal inputs are resolved deterministically by flipping *b* whenever
    the dot product is negative.
    """
    a = quat_normalize(a)
    b = quat_normalize(b)
    dot = float(np.dot(a, b))
    if dot < 0.0:
        b = -b
        dot = -dot
    if dot > 0.9995:
        return quat_normalize((1.0 - t) * a + t * b)
    theta = np.arccos(dot)
    sin_theta = np.sin(theta)
    return quat_normalize(
        (np.sin((1.0 - t) * theta) / sin_theta) * a + (np.sin(t * theta) / sin_theta) * b,
    )


# ---------------------------------------------------------------------------
# Exponential map
# ---------------------------------------------------------------------------

def skew(v: np.ndarray) -> np.ndarray:
    return np.array([
        [0.0, -v[2], v[1]],
        [v[2], 0.0, -v[0]],
        [-v[1], v[0], 0.0],
    ])


def expmap_to_matrix(r: np.ndarray) -> np.ndarray:
    r = np.asarray(r, dtype=float)
    theta_sq = float(r @ r)
    theta = np.sqrt(theta_sq)
    if theta < _SMALL_ANGLE:
        a = 1.0 - theta_sq / 6.0
        b = 0.5 - theta_sq / 24.0
    else:
        a = np.sin(theta) / theta
        b = (1.0 - np.cos(theta)) / theta_sq
    k = skew(r)
    return np.eye(3) + a * k + b * (k @ k)


def expmap_to_quat(r: np.ndarray) -> np.ndarray:
    r = np.asarray(r, dtype=float)
    theta = float(np.linalg.norm(r))
    if theta < _SMALL_ANGLE:
        scale = 0.5 - theta * theta / 48.0
    else:
        scale = np.sin(0.5 * theta) / theta
    return quat_normalize(np.concatenate([[np.cos(0.5 * theta)], scale * r]))


def quat_to_expmap(q: np.ndarray) -> np.ndarray:
    """Rotation vector with angle in [0, pi]."""
    q = quat_normalize(q)
    if q[0] < 0.0:
        q = -q
    v = q[1:]
    s = float(np.linalg.norm(v))
    if s < 1e-12:
        return 2.0 * v / q[0]
    angle = 2.0 * np.arctan2(s, q[0])
    return angle * v / s


def matrix_to_expmap(m: np.ndarray) -> np.ndarray:
    return quat_to_expmap(matrix_to_quat(m))


def left_jacobian(r: np.ndarray) -> np.ndarray:
    """Left Jacobian of SO(3): maps d(r)/dt to world angular velocity."""
    r = np.asarray(r, dtype=float)
    theta_sq = float(r @ r)
    theta = np.sqrt(theta_sq)
    if theta < 1e-4:
        a = 0.5 - theta_sq / 24.0
        b = 1.0 / 6.0 - theta_sq / 120.0
    else:
        a = (1.0 - np.cos(theta)) / theta_sq
        b = (theta - np.sin(theta)) / (theta_sq * theta)
    k = skew(r)
    return np.eye(3) + a * k + b * (k @ k)


# ---------------------------------------------------------------------------
# Rigid transforms
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class RigidTransform:
    """A rotation (unit quaternion, w first) followed by a translation in meters."""

    rotation: np.ndarray = field(default_factory=lambda: np.array([1.0, 0.0, 0.0, 0.0]))
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self) -> None:
        object.__setattr__(self, "rotation", np.asarray(self.rotation, dtype=float).reshape(4))
        object.__setattr__(
            self, "translation", np.asarray(self.translation, dtype=float).reshape(3),
        )

    @classmethod
    def identity(cls) -> RigidTransform:
        return cls()

    @classmethod
    def from_matrix(cls, m: np.ndarray) -> RigidTransform:
        return cls(rotation=matrix_to_quat(m[:3, :3]), translation=m[:3, 3].copy())

    @classmethod
    def from_pose7(cls, pose: Sequence[float]) -> RigidTransform:
        """Build from ``(x, y, z, qw, qx, qy, qz)``."""
        pose = np.asarray(pose, dtype=float)
        return cls(rotation=pose[3:7], translation=pose[:3])

    @classmethod
    def from_translation(cls, t: Sequence[float]) -> RigidTransform:
        return cls(translation=np.asarray(t, dtype=float))

    @classmethod
    def from_rotation_z(cls, angle: float, pivot: Sequence[float] | None = None) -> RigidTransform:
        """Rotation about the vertical axis through *pivot* (origin by default)."""
        q = quat_from_axis_angle([0.0, 0.0, 1.0], angle)
        if pivot is None:
            return cls(rotation=q)
        p = np.asarray(pivot, dtype=float)
        return cls(rotation=q, translation=p - rotate(q, p))

    def is_valid(self) -> bool:
        return is_unit_quaternion(self.rotation) and bool(np.all(np.isfinite(self.translation)))

    def as_matrix(self) -> np.ndarray:
        m = np.eye(4)
        m[:3, :3] = quat_to_matrix(self.rotation)
        m[:3, 3] = self.translation
        return m

    def as_pose7(self) -> np.ndarray:
        return np.concatenate([self.translation, self.rotation])

    def compose(self, other: RigidTransform) -> RigidTransform:
        """Return ``self ∘ other`` (apply *other* first)."""
        return RigidTransform(
            rotation=quat_normalize(quat_multiply(self.rotation, other.rotation)),
            translation=self.translation + rotate(self.rotation, other.translation),
        )

    def __matmul__(self, other: RigidTransform) -> RigidTransform:
        return self.compose(other)

    def inverse(self) -> RigidTransform:
        inv = quat_conjugate(self.rotation)
        return RigidTransform(rotation=inv, translation=-rotate(inv, self.translation))

    def apply(self, points: np.ndarray) -> np.ndarray:
        """Transform one point or an (N, 3) array of points."""
        return rotate(self.rotation, points) + self.translation

    def __repr__(self) -> str:
        return (
            f"RigidTransform(rotation={self.rotation.tolist()}, "
            f"translation={self.translation.tolist()})"
        )


def look_at(
    eye: Sequence[float],
    target: Sequence[float],
    up: Sequence[float] = (0.0, 0.0, 1.0),
) -> RigidTransform:
    """Camera pose whose local +z looks from *eye* at *target* (x right, y down)."""
    eye = np.asarray(eye, dtype=float)
    forward = np.asarray(target, dtype=float) - eye
    forward /= np.linalg.norm(forward)
    right = np.cross(forward, np.asarray(up, dtype=float))
    if np.linalg.norm(right) < 1e-9:
        right = np.cross(forward, np.array([1.0, 0.0, 0.0]))
    right /= np.linalg.norm(right)
    down = np.cross(forward, right)
    m = np.eye(4)
    m[:3, 0] = right
    m[:3, 1] = down
    m[:3, 2] = forward
    m[:3, 3] = eye
    return RigidTransform.from_matrix(m)
