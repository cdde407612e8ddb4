"""Rotation, quaternion and SE(3) algebra plus the pose loss functions.

Conventions
-----------
* Quaternions are Hamilton, stored ``(w, x, y, z)``.
* Frames are right-handed. A :class:`Pose` maps points from its local frame
  into the parent frame, ``p_parent = R @ p_local + t``. Trajectories store
  camera-to-world poses.
* Twists are 6-vectors ordered rotation first, ``xi = (omega, v)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidArgument

SMALL_ANGLE = 1e-6
# above this angle the axis is read from the symmetric part of R
NEAR_PI = math.pi - 0.1
ORTHO_DRIFT_TOL = 1e-7


def _frozen(a, shape) -> np.ndarray:
    a = np.array(a, dtype=np.float64).reshape(shape)
    a.setflags(write=False)
    return a


def skew(v) -> np.ndarray:
    x, y, z = np.asarray(v, dtype=np.float64).reshape(3)
    return np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])


def vee(m: np.ndarray) -> np.ndarray:
    return np.array([m[2, 1], m[0, 2], m[1, 0]], dtype=np.float64)


# --------------------------------------------------------------------------
# Quaternions
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class Quaternion:
    w: float
    x: float
    y: float
    z: float

    def as_array(self) -> np.ndarray:
        return np.array([self.w, self.x, self.y, self.z], dtype=np.float64)

    def norm(self) -> float:
        return float(np.linalg.norm(self.as_array()))

    def normalized(self) -> "Quaternion":
        q = self.as_array()
        if not np.all(np.isfinite(q)):
            raise InvalidArgument("quaternion has non-finite components")
        n = np.linalg.norm(q)
        if n == 0.0:
            raise InvalidArgument("zero quaternion cannot be normalised")
        return Quaternion(*(q / n))

    def __neg__(self) -> "Quaternion":
        return Quaternion(-self.w, -self.x, -self.y, -self.z)


def quat_to_rot(q: Quaternion) -> np.ndarray:
    """Rotation matrix of a (not necessarily unit) quaternion.

    Raises :class:`InvalidArgument` for non-finite or zero input.
    """
    w, x, y, z = q.normalized().as_array()
    return np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
            [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
            [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
        ]
    )


def rot_to_quat(R) -> Quaternion:
    """Unit quaternion with ``w >= 0`` for a rotation matrix (Shepperd's method)."""
    R = np.asarray(R, dtype=np.float64)
    tr = R[0, 0] + R[1, 1] + R[2, 2]
    if tr > 0.0:
        s = 2.0 * math.sqrt(tr + 1.0)
        w = 0.25 * s
        x = (R[2, 1] - R[1, 2]) / s
        y = (R[0, 2] - R[2, 0]) / s
        z = (R[1, 0] - R[0, 1]) / s
    elif R[0, 0] > R[1, 1] and R[0, 0] > R[2, 2]:
        s = 2.0 * math.sqrt(1.0 + R[0, 0] - R[1, 1] - R[2, 2])
        w = (R[2, 1] - R[1, 2]) / s
        x = 0.25 * s
        y = (R[0, 1] + R[1, 0]) / s
        z = (R[0, 2] + R[2, 0]) / s
    elif R[1, 1] > R[2, 2]:
        s = 2.0 * math.sqrt(1.0 + R[1, 1] - R[0, 0] - R[2, 2])
        w = (R[0, 2] - R[2, 0]) / s
        x = (R[0, 1] + R[1, 0]) / s
        y = 0.25 * s
        z = (R[1, 2] + R[2, 1]) / s
    else:
        s = 2.0 * math.sqrt(1.0 + R[2, 2] - R[0, 0] - R[1, 1])
        w = (R[1, 0] - R[0, 1]) / s
        x = (R[0, 2] + R[2, 0]) / s
        y = (R[1, 2] + R[2, 1]) / s
        z = 0.25 * s
    q = np.array([w, x, y, z])
    q /= np.linalg.norm(q)
    if q[0] < 0.0:
        q = -q
    return Quaternion(*q)


# --------------------------------------------------------------------------
# SO(3)
# --------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class AxisAngle:
    axis: np.ndarray
    angle: float

    def __post_init__(self):
        object.__setattr__(self, "axis", _frozen(self.axis, (3,)))
        object.__setattr__(self, "angle", float(self.angle))

    @property
    def rotvec(self) -> np.ndarray:
        return self.axis * self.angle


def so3_exp(rotvec) -> np.ndarray:
    """Rodrigues' formula."""
    w = np.asarray(rotvec, dtype=np.float64).reshape(3)
    theta = float(np.linalg.norm(w))
    W = skew(w)
    if theta < SMALL_ANGLE:
        return np.eye(3) + W + 0.5 * (W @ W)
    a = math.sin(theta) / theta
    b = (1.0 - math.cos(theta)) / (theta * theta)
    return np.eye(3) + a * W + b * (W @ W)


def so3_log(R) -> AxisAngle:
    """Axis and angle in ``[0, pi]`` of a rotation matrix.

    The angle is ``atan2(|vee(R - R^T)| / 2, (trace - 1) / 2)``, which equals
    ``arccos((trace - 1) / 2)`` but keeps full precision near 0 and pi. Near pi
    the axis comes from the largest-diagonal column of the symmetric part,
    with its sign taken from the antisymmetric part. At angle 0 the axis is +x.
    """
    R = np.asarray(R, dtype=np.float64)
    cos_t = 0.5 * (R[0, 0] + R[1, 1] + R[2, 2] - 1.0)
    w = 0.5 * vee(R - R.T)
    sin_t = float(np.linalg.norm(w))
    angle = math.atan2(sin_t, cos_t)

    if angle < SMALL_ANGLE:
        rv = w * (1.0 + angle * angle / 6.0)
        n = float(np.linalg.norm(rv))
        if n == 0.0:
            return AxisAngle(np.array([1.0, 0.0, 0.0]), 0.0)
        return AxisAngle(rv / n, n)

    if angle > NEAR_PI:
        S = 0.5 * (R + R.T) - cos_t * np.eye(3)
        k = int(np.argmax(np.diag(S)))
        axis = S[:, k] / math.sqrt(max(S[k, k], 1e-300))
        axis /= np.linalg.norm(axis)
        if axis @ w < 0.0:
            axis = -axis
        return AxisAngle(axis, angle)

    return AxisAngle(w / sin_t, angle)


def so3_log_vec(R) -> np.ndarray:
    return so3_log(R).rotvec


def rotation_angle(R) -> float:
    return so3_log(R).angle


def orthonormalize(R) -> np.ndarray:
    """Nearest rotation matrix in the Frobenius sense (polar decomposition)."""
    U, _, Vt = np.linalg.svd(np.asarray(R, dtype=np.float64))
    D = np.diag([1.0, 1.0, np.sign(np.linalg.det(U @ Vt))])
    return U @ D @ Vt


def is_rotation(R, tol: float = 1e-9) -> bool:
    R = np.asarray(R, dtype=np.float64)
    if R.shape != (3, 3) or not np.all(np.isfinite(R)):
        return False
    return bool(np.abs(R.T @ R - np.eye(3)).max() <= tol and abs(np.linalg.det(R) - 1.0) <= tol)


# --------------------------------------------------------------------------
# SE(3)
# --------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class Pose:
    """Rigid transform ``[R, t; 0 0 0 1]``.

    ``scaled`` marks whether the translation is metric. Monocular pose
    estimators produce unscaled poses; anything touching the map requires
    scaled ones.
    """

    rotation: np.ndarray = field(default_factory=lambda: np.eye(3))
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))
    scaled: bool = True

    def __post_init__(self):
        object.__setattr__(self, "rotation", _frozen(self.rotation, (3, 3)))
        object.__setattr__(self, "translation", _frozen(self.translation, (3,)))
        object.__setattr__(self, "scaled", bool(self.scaled))

    @classmethod
    def identity(cls) -> "Pose":
        return cls()

    @classmethod
    def from_matrix(cls, M, scaled: bool = True) -> "Pose":
        M = np.asarray(M, dtype=np.float64)
        return cls(M[:3, :3], M[:3, 3], scaled)

    @classmethod
    def from_quat(cls, q: Quaternion, t, scaled: bool = True) -> "Pose":
        return cls(quat_to_rot(q), t, scaled)

    @property
    def matrix(self) -> np.ndarray:
        M = np.eye(4)
        M[:3, :3] = self.rotation
        M[:3, 3] = self.translation
        return M

    @property
    def quaternion(self) -> Quaternion:
        return rot_to_quat(self.rotation)

    def inverse(self) -> "Pose":
        Rt = self.rotation.T
        return Pose(Rt, -Rt @ self.translation, self.scaled)

    def compose(self, other: "Pose") -> "Pose":
        R = self.rotation @ other.rotation
        if np.abs(R.T @ R - np.eye(3)).max() > ORTHO_DRIFT_TOL:
            R = orthonormalize(R)
        t = self.rotation @ other.translation + self.translation
        return Pose(R, t, self.scaled and other.scaled)

    __matmul__ = compose

    def apply(self, points) -> np.ndarray:
        """Transform an ``(..., 3)`` array of points."""
        p = np.asarray(points, dtype=np.float64)
        return p @ self.rotation.T + self.translation

    def with_translation(self, t, scaled: bool | None = None) -> "Pose":
        return Pose(self.rotation, t, self.scaled if scaled is None else scaled)

    def __repr__(self) -> str:
        q = self.quaternion
        return (
            f"Pose(t={np.array2string(self.translation, precision=6)}, "
            f"q=({q.w:.6f}, {q.x:.6f}, {q.y:.6f}, {q.z:.6f}), scaled={self.scaled})"
        )


def compose(a: Pose, b: Pose) -> Pose:
    return a.compose(b)


def inverse(p: Pose) -> Pose:
    return p.inverse()


def _V(w: np.ndarray) -> np.ndarray:
    theta = float(np.linalg.norm(w))
    W = skew(w)
    if theta < SMALL_ANGLE:
        b, c = 0.5 - theta * theta / 24.0, 1.0 / 6.0 - theta * theta / 120.0
    else:
        b = (1.0 - math.cos(theta)) / theta**2
        c = (theta - math.sin(theta)) / theta**3
    return np.eye(3) + b * W + c * (W @ W)


def _V_inv(w: np.ndarray) -> np.ndarray:
    theta = float(np.linalg.norm(w))
    W = skew(w)
    if theta < SMALL_ANGLE:
        c = 1.0 / 12.0 + theta * theta / 720.0
    else:
        c = (1.0 - theta * math.sin(theta) / (2.0 * (1.0 - math.cos(theta)))) / theta**2
    return np.eye(3) - 0.5 * W + c * (W @ W)


def se3_exp(xi, scaled: bool = True) -> Pose:
    xi = np.asarray(xi, dtype=np.float64).reshape(6)
    w, v = xi[:3], xi[3:]
    return Pose(so3_exp(w), _V(w) @ v, scaled)


def se3_log(p: Pose) -> np.ndarray:
    w = so3_log_vec(p.rotation)
    return np.concatenate([w, _V_inv(w) @ p.translation])


def adjoint(p: Pose) -> np.ndarray:
    """6x6 adjoint for rotation-first twists: ``exp(Ad(T) xi) = T exp(xi) T^-1``."""
    R = p.rotation
    A = np.zeros((6, 6))
    A[:3, :3] = R
    A[3:, 3:] = R
    A[3:, :3] = skew(p.translation) @ R
    return A


def relative(a: Pose, b: Pose) -> Pose:
    """Motion from ``a`` to ``b``: ``a^-1 b``."""
    return a.inverse().compose(b)


# --------------------------------------------------------------------------
# Pose losses
# --------------------------------------------------------------------------


def chordal_loss(r, r_hat) -> float:
    """Frobenius norm of ``R - R_hat``."""
    d = np.asarray(r, dtype=np.float64) - np.asarray(r_hat, dtype=np.float64)
    return float(np.sqrt(np.sum(d * d)))


def translation_l1(t, t_hat) -> float:
    return float(np.sum(np.abs(np.asarray(t, dtype=np.float64) - np.asarray(t_hat, dtype=np.float64))))


def pose_cycle_loss(fwd_real: Pose, fwd_gen: Pose, bwd_real: Pose, bwd_gen: Pose) -> float:
    """Pose-consistency term between real and generated frame pairs.

    ``fwd_*`` are estimates for the (i-1 -> i) pair, ``bwd_*`` for (i -> i-1);
    ``*_real`` come from real frames and ``*_gen`` from generated ones.
    """
    return (
        chordal_loss(fwd_real.rotation, fwd_gen.rotation)
        + translation_l1(fwd_real.translation, fwd_gen.translation)
        + chordal_loss(bwd_real.rotation, bwd_gen.rotation)
        + translation_l1(bwd_real.translation, bwd_gen.translation)
    )
