"""Minimal SO(3)/SE(3) toolbox.

Conventions used throughout the package:

- A :class:`Pose` named ``a_from_b`` maps coordinates expressed in frame ``b``
  into frame ``a``: ``p_a = a_from_b.act(p_b)``.
- Twists are 6-vectors ordered translation-first: ``xi = [rho, phi]`` with
  ``rho`` in meters and ``phi`` in radians.
- Perturbations are LEFT multiplicative: ``T <- exp_se3(delta) @ T``. Every
  analytic Jacobian and every finite-difference check in this package
  perturbs on that side.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import AngleAtPi

# Below this angle the closed-form Rodrigues coefficients lose precision to
# cancellation; fall back to quartic Taylor expansions.
_SMALL_ANGLE = 1e-4


def skew(v: np.ndarray) -> np.ndarray:
    """Cross-product matrix: skew(v) @ w == cross(v, w)."""
    x, y, z = v
    return np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])


def _rodrigues_coeffs(angle: float) -> tuple[float, float]:
    """Coefficients (a, b) of exp([phi]x) = I + a*[phi]x + b*[phi]x^2."""
    if angle < _SMALL_ANGLE:
        a2 = angle * angle
        a = 1.0 - a2 / 6.0 + a2 * a2 / 120.0
        b = 0.5 - a2 / 24.0 + a2 * a2 / 720.0
    else:
        half = 0.5 * angle
        a = math.sin(angle) / angle
        # 1 - cos via half-angle sine avoids cancellation for small angles.
        b = 2.0 * math.sin(half) ** 2 / (angle * angle)
    return a, b


def so3_exp(phi: np.ndarray) -> np.ndarray:
    """Exponential map of SO(3) (Rodrigues formula)."""
    phi = np.asarray(phi, dtype=float)
    angle = float(np.linalg.norm(phi))
    a, b = _rodrigues_coeffs(angle)
    k = skew(phi)
    return np.eye(3) + a * k + b * (k @ k)


def so3_log(rotation: np.ndarray) -> np.ndarray:
    """Logarithm of a rotation matrix as a rotation vector.

    Raises AngleAtPi when the rotation angle is within 1e-6 of pi, where
    the axis sign is not determined by the matrix.
    """
    vee = 0.5 * np.array(
        [
            rotation[2, 1] - rotation[1, 2],
            rotation[0, 2] - rotation[2, 0],
            rotation[1, 0] - rotation[0, 1],
        ]
    )
    s = float(np.linalg.norm(vee))
    c = 0.5 * (float(np.trace(rotation)) - 1.0)
    angle = math.atan2(s, c)
    if math.pi - angle < 1e-6:
        raise AngleAtPi(f"rotation angle {angle!r} within 1e-6 of pi")
    if angle < _SMALL_ANGLE:
        a2 = angle * angle
        factor = 1.0 + a2 / 6.0 + 7.0 * a2 * a2 / 360.0
    else:
        factor = angle / s
    return factor * vee


def rotation_angle_from_matrix(rotation: np.ndarray) -> float:
    """Rotation angle in [0, pi], well defined for any rotation matrix."""
    vee = 0.5 * np.array(
        [
            rotation[2, 1] - rotation[1, 2],
            rotation[0, 2] - rotation[2, 0],
            rotation[1, 0] - rotation[0, 1],
        ]
    )
    s = float(np.linalg.norm(vee))
    c = 0.5 * (float(np.trace(rotation)) - 1.0)
    return math.atan2(s, c)


def so3_left_jacobian(phi: np.ndarray) -> np.ndarray:
    """Left Jacobian V of SO(3): exp_se3([rho, phi]) translates by V @ rho."""
    angle = float(np.linalg.norm(phi))
    if angle < _SMALL_ANGLE:
        a2 = angle * angle
        b = 0.5 - a2 / 24.0 + a2 * a2 / 720.0
        c = 1.0 / 6.0 - a2 / 120.0 + a2 * a2 / 5040.0
    else:
        half = 0.5 * angle
        b = 2.0 * math.sin(half) ** 2 / (angle * angle)
        c = (angle - math.sin(angle)) / angle**3
    k = skew(phi)
    return np.eye(3) + b * k + c * (k @ k)


def so3_left_jacobian_inv(phi: np.ndarray) -> np.ndarray:
    """Inverse of the left Jacobian of SO(3)."""
    angle = float(np.linalg.norm(phi))
    if angle < _SMALL_ANGLE:
        a2 = angle * angle
        d = 1.0 / 12.0 + a2 / 720.0 + a2 * a2 / 30240.0
    else:
        half = 0.5 * angle
        # d = (1 - (angle/2) * cot(angle/2)) / angle^2, written via tan for stability
        d = (1.0 - half / math.tan(half)) / (angle * angle)
    k = skew(phi)
    return np.eye(3) - 0.5 * k + d * (k @ k)


def project_to_so3(matrix: np.ndarray) -> np.ndarray:
    """Closest rotation (Frobenius) to an arbitrary 3x3 matrix, det +1."""
    u, _, vt = np.linalg.svd(matrix)
    rotation = u @ vt
    if np.linalg.det(rotation) < 0.0:
        rotation = u @ np.diag([1.0, 1.0, -1.0]) @ vt
    return rotation


@dataclass(frozen=True, eq=False)
class Pose:
    """Rigid transform in SE(3): p_out = rotation @ p_in + translation."""

    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        rotation = np.array(self.rotation, dtype=float)
        translation = np.array(self.translation, dtype=float).reshape(3)
        rotation.flags.writeable = False
        translation.flags.writeable = False
        object.__setattr__(self, "rotation", rotation)
        object.__setattr__(self, "translation", translation)

    @staticmethod
    def identity() -> "Pose":
        return Pose(np.eye(3), np.zeros(3))

    @staticmethod
    def from_matrix(matrix: np.ndarray) -> "Pose":
        matrix = np.asarray(matrix, dtype=float)
        return Pose(matrix[:3, :3], matrix[:3, 3])

    def matrix(self) -> np.ndarray:
        out = np.eye(4)
        out[:3, :3] = self.rotation
        out[:3, 3] = self.translation
        return out

    def __matmul__(self, other: "Pose") -> "Pose":
        return Pose(
            self.rotation @ other.rotation,
            self.rotation @ other.translation + self.translation,
        )

    def inverse(self) -> "Pose":
        rt = self.rotation.T
        return Pose(rt, -rt @ self.translation)

    def act(self, points: np.ndarray) -> np.ndarray:
        """Apply to a single 3-point or an (N, 3) array of points."""
        points = np.asarray(points, dtype=float)
        return points @ self.rotation.T + self.translation

    def rotation_angle(self) -> float:
        return rotation_angle_from_matrix(self.rotation)

    def __eq__(self, other):
        if not isinstance(other, Pose):
            return NotImplemented
        return np.array_equal(self.rotation, other.rotation) and np.array_equal(
            self.translation, other.translation
        )

    def __hash__(self):
        return hash((self.rotation.tobytes(), self.translation.tobytes()))

    def __repr__(self):
        q = quat_from_rotation(self.rotation)
        t = self.translation
        return f"Pose(quat_wxyz={np.round(q, 6).tolist()}, t={np.round(t, 6).tolist()})"


def exp_se3(xi: np.ndarray) -> Pose:
    """SE(3) exponential of a twist [rho, phi]."""
    xi = np.asarray(xi, dtype=float).reshape(6)
    rho, phi = xi[:3], xi[3:]
    return Pose(so3_exp(phi), so3_left_jacobian(phi) @ rho)


def log_se3(pose: Pose) -> np.ndarray:
    """SE(3) logarithm: the twist xi with exp_se3(xi) == pose.

    Raises AngleAtPi for rotations within 1e-6 of a half turn.
    """
    phi = so3_log(pose.rotation)
    rho = so3_left_jacobian_inv(phi) @ pose.translation
    return np.concatenate([rho, phi])


def rotation_angle(pose: Pose) -> float:
    """Absolute rotation angle of a pose, radians in [0, pi]."""
    return pose.rotation_angle()


def quat_from_rotation(rotation: np.ndarray) -> np.ndarray:
    """Unit quaternion (w, x, y, z) with w >= 0, valid for any rotation."""
    m = rotation
    tr = float(np.trace(m))
    if tr > 0.0:
        s = math.sqrt(tr + 1.0) * 2.0
        q = np.array(
            [0.25 * s, (m[2, 1] - m[1, 2]) / s, (m[0, 2] - m[2, 0]) / s, (m[1, 0] - m[0, 1]) / s]
        )
    elif m[0, 0] >= m[1, 1] and m[0, 0] >= m[2, 2]:
        s = math.sqrt(1.0 + m[0, 0] - m[1, 1] - m[2, 2]) * 2.0
        q = np.array(
            [(m[2, 1] - m[1, 2]) / s, 0.25 * s, (m[0, 1] + m[1, 0]) / s, (m[0, 2] + m[2, 0]) / s]
        )
    elif m[1, 1] >= m[2, 2]:
        s = math.sqrt(1.0 + m[1, 1] - m[0, 0] - m[2, 2]) * 2.0
        q = np.array(
            [(m[0, 2] - m[2, 0]) / s, (m[0, 1] + m[1, 0]) / s, 0.25 * s, (m[1, 2] + m[2, 1]) / s]
        )
    else:
        s = math.sqrt(1.0 + m[2, 2] - m[0, 0] - m[1, 1]) * 2.0
        q = np.array(
            [(m[1, 0] - m[0, 1]) / s, (m[0, 2] + m[2, 0]) / s, (m[1, 2] + m[2, 1]) / s, 0.25 * s]
        )
    q /= np.linalg.norm(q)
    if q[0] < 0.0:
        q = -q
    return q


def rotation_from_quat(quat_wxyz: np.ndarray) -> np.ndarray:
    """Rotation matrix from a unit quaternion (w, x, y, z)."""
    w, x, y, z = np.asarray(quat_wxyz, dtype=float)
    return np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
            [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
            [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
        ]
    )
