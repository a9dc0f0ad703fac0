"""Rigid-body math: SE(3) transforms, rotation maps, pose differences.

Points and directions are float64 numpy arrays of shape (3,) or (N, 3);
rotations are 3x3 orthonormal matrices with determinant +1.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

# Orthonormality drift beyond this triggers a repair in compose().
ORTHONORMAL_TOL = 1e-9


def skew(v: np.ndarray) -> np.ndarray:
    """Skew-symmetric matrix [v]x such that [v]x @ p = v x p."""
    x, y, z = np.asarray(v, dtype=np.float64).reshape(3)
    return np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])


def orthonormalize(rotation: np.ndarray) -> np.ndarray:
    """Project a near-rotation matrix onto SO(3) (closest in Frobenius norm)."""
    u, _, vt = np.linalg.svd(np.asarray(rotation, dtype=np.float64))
    if np.linalg.det(u @ vt) < 0:
        u = u.copy()
        u[:, -1] *= -1.0
    return u @ vt


def rotvec_to_matrix(rotvec: np.ndarray) -> np.ndarray:
    """Exponential map: rotation vector (axis * angle, radians) to matrix."""
    w = np.asarray(rotvec, dtype=np.float64).reshape(3)
    theta = float(np.linalg.norm(w))
    k = skew(w)
    if theta < 1e-10:
        # second-order Taylor keeps the map smooth through zero
        return np.eye(3) + k + 0.5 * (k @ k)
    a = np.sin(theta) / theta
    b = (1.0 - np.cos(theta)) / (theta * theta)
    return np.eye(3) + a * k + b * (k @ k)


def rotation_angle(rotation: np.ndarray) -> float:
    """Rotation angle in [0, pi] of a rotation matrix.

    Uses atan2 of the skew-part magnitude against the trace so the result
    stays finite and accurate near both 0 and pi.
    """
    r = np.asarray(rotation, dtype=np.float64)
    cos_theta = 0.5 * (np.trace(r) - 1.0)
    sin_theta = 0.5 * np.linalg.norm(
        [r[2, 1] - r[1, 2], r[0, 2] - r[2, 0], r[1, 0] - r[0, 1]]
    )
    return float(np.arctan2(sin_theta, cos_theta))


def matrix_to_rotvec(rotation: np.ndarray) -> np.ndarray:
    """Logarithm map: rotation matrix to rotation vector (axis * angle)."""
    r = np.asarray(rotation, dtype=np.float64)
    vec = 0.5 * np.array(
        [r[2, 1] - r[1, 2], r[0, 2] - r[2, 0], r[1, 0] - r[0, 1]]
    )
    theta = rotation_angle(r)
    if theta < 1e-10:
        return vec
    if theta < np.pi - 1e-4:
        return vec * (theta / np.sin(theta))
    # Near pi the skew part vanishes; recover the axis from R + I instead.
    b = r + np.eye(3)
    j = int(np.argmax(np.diag(b)))
    axis = b[:, j] / np.linalg.norm(b[:, j])
    if np.dot(axis, vec) < 0:
        axis = -axis
    return axis * theta


@dataclass(frozen=True)
class RigidTransform:
    """SE(3) transform: p_out = rotation @ p_in + translation."""

    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        rot = np.array(self.rotation, dtype=np.float64)
        trans = np.array(self.translation, dtype=np.float64).reshape(3)
        if rot.shape != (3, 3):
            raise ValueError(f"rotation must be 3x3, got {rot.shape}")
        if not (np.all(np.isfinite(rot)) and np.all(np.isfinite(trans))):
            raise ValueError("transform has non-finite entries")
        if np.max(np.abs(rot.T @ rot - np.eye(3))) > ORTHONORMAL_TOL:
            raise ValueError("rotation is not orthonormal within 1e-9")
        if abs(np.linalg.det(rot) - 1.0) > ORTHONORMAL_TOL:
            raise ValueError("rotation determinant is not +1 within 1e-9")
        rot.flags.writeable = False
        trans.flags.writeable = False
        object.__setattr__(self, "rotation", rot)
        object.__setattr__(self, "translation", trans)

    @classmethod
    def identity(cls) -> "RigidTransform":
        return cls(np.eye(3), np.zeros(3))

    @classmethod
    def from_rotvec(cls, rotvec, translation=(0.0, 0.0, 0.0)) -> "RigidTransform":
        return cls(rotvec_to_matrix(np.asarray(rotvec, dtype=np.float64)), translation)

    @classmethod
    def from_quat(cls, quat_wxyz, translation=(0.0, 0.0, 0.0)) -> "RigidTransform":
        """Build from a unit quaternion (w, x, y, z); accepted at I/O boundaries."""
        q = np.asarray(quat_wxyz, dtype=np.float64).reshape(4)
        norm = np.linalg.norm(q)
        if abs(norm - 1.0) > 1e-6:
            raise ValueError(f"quaternion norm {norm:.8f} is not 1 within 1e-6")
        w, x, y, z = q / norm
        rot = np.array(
            [
                [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
                [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
                [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
            ]
        )
        return cls(orthonormalize(rot), translation)

    def apply(self, points: np.ndarray) -> np.ndarray:
        """Transform one (3,) point or an (N, 3) array of points."""
        pts = np.asarray(points, dtype=np.float64)
        if pts.shape == (3,):
            return self.rotation @ pts + self.translation
        return pts @ self.rotation.T + self.translation

    def matrix(self) -> np.ndarray:
        """Homogeneous 4x4 matrix form."""
        m = np.eye(4)
        m[:3, :3] = self.rotation
        m[:3, 3] = self.translation
        return m


@dataclass(frozen=True)
class PoseDelta:
    """Magnitude of the difference between two poses."""

    translation_norm: float
    rotation_angle: float

    def __post_init__(self):
        if not (self.translation_norm >= 0 and 0 <= self.rotation_angle <= np.pi + 1e-12):
            raise ValueError("pose delta out of range")


def compose(a: RigidTransform, b: RigidTransform) -> RigidTransform:
    """Composition a∘b: (a∘b)(x) == a(b(x)). Repairs orthonormality drift."""
    rot = a.rotation @ b.rotation
    if np.max(np.abs(rot.T @ rot - np.eye(3))) > ORTHONORMAL_TOL:
        rot = orthonormalize(rot)
    return RigidTransform(rot, a.rotation @ b.translation + a.translation)


def invert(t: RigidTransform) -> RigidTransform:
    """Inverse transform: compose(t, invert(t)) is the identity."""
    rt = t.rotation.T
    return RigidTransform(rt, -(rt @ t.translation))


def pose_delta(a: RigidTransform, b: RigidTransform) -> PoseDelta:
    """Translation distance and relative rotation angle between two poses."""
    return PoseDelta(
        translation_norm=float(np.linalg.norm(a.translation - b.translation)),
        rotation_angle=rotation_angle(a.rotation @ b.rotation.T),
    )


def mean_rotation(rotations: np.ndarray) -> np.ndarray:
    """Chordal mean of a stack of rotation matrices, shape (N, 3, 3)."""
    stack = np.asarray(rotations, dtype=np.float64)
    if stack.ndim != 3 or stack.shape[1:] != (3, 3):
        raise ValueError(f"expected (N, 3, 3), got {stack.shape}")
    return orthonormalize(stack.mean(axis=0))
