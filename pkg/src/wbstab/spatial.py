"""6D spatial vector algebra: motion/force vectors, rigid transforms, spatial inertias.

Conventions used across the whole package:

* spatial vectors are ordered angular-then-linear,
* ``Transform(rotation=R, translation=p)`` maps source-frame coordinates to
  target-frame coordinates, ``x_tgt = R @ x_src + p`` (i.e. it is the pose of
  the source frame expressed in the target frame),
* quaternions are (w, x, y, z),
* world frame is right handed, z up, gravity (0, 0, -9.81) m/s^2.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

GRAVITY = np.array([0.0, 0.0, -9.81])
GRAVITY.setflags(write=False)


def _as_vec3(x) -> np.ndarray:
    v = np.asarray(x, dtype=float).reshape(3).copy()
    v.setflags(write=False)
    return v


def _as_mat3(x) -> np.ndarray:
    m = np.asarray(x, dtype=float).reshape(3, 3).copy()
    m.setflags(write=False)
    return m


def skew(v) -> np.ndarray:
    """Cross-product matrix: skew(v) @ u == cross(v, u)."""
    x, y, z = np.asarray(v, dtype=float).reshape(3)
    return np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])


@dataclass(frozen=True, eq=False)
class SpatialMotion:
    """Twist-like quantity: (angular rad/s, linear m/s)."""

    angular: np.ndarray
    linear: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "angular", _as_vec3(self.angular))
        object.__setattr__(self, "linear", _as_vec3(self.linear))

    def as_vector(self) -> np.ndarray:
        return np.concatenate([self.angular, self.linear])

    @staticmethod
    def from_vector(v) -> "SpatialMotion":
        v = np.asarray(v, dtype=float).reshape(6)
        return SpatialMotion(v[:3], v[3:])

    def __add__(self, other: "SpatialMotion") -> "SpatialMotion":
        return SpatialMotion(self.angular + other.angular, self.linear + other.linear)

    def __mul__(self, s: float) -> "SpatialMotion":
        return SpatialMotion(self.angular * s, self.linear * s)

    __rmul__ = __mul__


@dataclass(frozen=True, eq=False)
class SpatialForce:
    """Wrench-like quantity: (moment N*m, force N).

    Pairs with SpatialMotion to give power in watts:
    ``dot(moment, angular) + dot(force, linear)``.
    """

    moment: np.ndarray
    force: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "moment", _as_vec3(self.moment))
        object.__setattr__(self, "force", _as_vec3(self.force))

    def as_vector(self) -> np.ndarray:
        return np.concatenate([self.moment, self.force])

    @staticmethod
    def from_vector(v) -> "SpatialForce":
        v = np.asarray(v, dtype=float).reshape(6)
        return SpatialForce(v[:3], v[3:])

    def __add__(self, other: "SpatialForce") -> "SpatialForce":
        return SpatialForce(self.moment + other.moment, self.force + other.force)

    def __mul__(self, s: float) -> "SpatialForce":
        return SpatialForce(self.moment * s, self.force * s)

    __rmul__ = __mul__


def power_pairing(f: SpatialForce, v: SpatialMotion) -> float:
    return float(f.moment @ v.angular + f.force @ v.linear)


@dataclass(frozen=True, eq=False)
class Transform:
    """Rigid transform x_tgt = R @ x_src + p."""

    rotation: np.ndarray
    translation: np.ndarray

    ORTHONORMALITY_TOL = 1e-10

    def __post_init__(self):
        object.__setattr__(self, "rotation", _as_mat3(self.rotation))
        object.__setattr__(self, "translation", _as_vec3(self.translation))

    @staticmethod
    def identity() -> "Transform":
        return Transform(np.eye(3), np.zeros(3))

    @staticmethod
    def from_quat(translation, quat_wxyz) -> "Transform":
        return Transform(quat_to_rot(quat_wxyz), translation)

    def validate(self):
        R = self.rotation
        if not np.all(np.isfinite(R)) or not np.all(np.isfinite(self.translation)):
            raise ValueError("transform has non-finite entries")
        err = np.abs(R.T @ R - np.eye(3)).max()
        if err > self.ORTHONORMALITY_TOL:
            raise ValueError(f"rotation not orthonormal (max residual {err:.3e})")
        if abs(np.linalg.det(R) - 1.0) > self.ORTHONORMALITY_TOL:
            raise ValueError("rotation determinant is not +1")

    def compose(self, other: "Transform") -> "Transform":
        """self after other: (self * other)(x) = self(other(x))."""
        return Transform(self.rotation @ other.rotation,
                         self.rotation @ other.translation + self.translation)

    def inverse(self) -> "Transform":
        return Transform(self.rotation.T, -self.rotation.T @ self.translation)

    def apply_point(self, x) -> np.ndarray:
        return self.rotation @ np.asarray(x, dtype=float) + self.translation

    def quat(self) -> np.ndarray:
        return rot_to_quat(self.rotation)


@dataclass(frozen=True, eq=False)
class SpatialInertia:
    """Rigid-body inertia: mass, CoM in the link frame, and the 3x3 rotational
    inertia about the *link frame origin* (not the CoM)."""

    mass: float
    com: np.ndarray
    rot_inertia: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "mass", float(self.mass))
        object.__setattr__(self, "com", _as_vec3(self.com))
        object.__setattr__(self, "rot_inertia", _as_mat3(self.rot_inertia))

    @staticmethod
    def from_com_inertia(mass, com, rot_inertia_about_com) -> "SpatialInertia":
        """Build from inertia about the CoM (parallel-axis shift to the origin)."""
        c = np.asarray(com, dtype=float).reshape(3)
        C = skew(c)
        I_origin = np.asarray(rot_inertia_about_com, dtype=float) + float(mass) * (C @ C.T)
        return SpatialInertia(mass, c, I_origin)

    def validate(self):
        if not self.mass > 0.0:
            raise ValueError(f"nonpositive mass {self.mass}")
        sym_err = np.abs(self.rot_inertia - self.rot_inertia.T).max()
        if sym_err > 1e-12 * max(1.0, np.abs(self.rot_inertia).max()):
            raise ValueError("rotational inertia not symmetric")
        C = skew(self.com)
        about_com = self.rot_inertia - self.mass * (C @ C.T)
        eigs = np.linalg.eigvalsh(0.5 * (about_com + about_com.T))
        if eigs.min() < -1e-9 * max(1.0, eigs.max()):
            raise ValueError("rotational inertia about CoM not positive semidefinite")

    def matrix6(self) -> np.ndarray:
        """Dense 6x6 inertia (angular-then-linear ordering)."""
        m, C = self.mass, skew(self.com)
        out = np.zeros((6, 6))
        out[:3, :3] = self.rot_inertia
        out[:3, 3:] = m * C
        out[3:, :3] = m * C.T
        out[3:, 3:] = m * np.eye(3)
        return out


def transform_motion(X: Transform, v: SpatialMotion) -> SpatialMotion:
    """Express a motion vector in the transform's target frame.

    The reference point moves from the source origin to the target origin, so
    for a pure translation t the linear part picks up -omega x t.
    """
    w = X.rotation @ v.angular
    return SpatialMotion(w, X.rotation @ v.linear + np.cross(X.translation, w))


def transform_force(X: Transform, f: SpatialForce) -> SpatialForce:
    """Dual of transform_motion; preserves the power pairing."""
    fr = X.rotation @ f.force
    return SpatialForce(X.rotation @ f.moment + np.cross(X.translation, fr), fr)


def inertia_apply(I: SpatialInertia, a: SpatialMotion) -> SpatialForce:
    """Map a motion vector through the body's spatial inertia (v -> I v)."""
    mc = I.mass * I.com
    moment = I.rot_inertia @ a.angular + np.cross(mc, a.linear)
    force = I.mass * a.linear - np.cross(mc, a.angular)
    return SpatialForce(moment, force)


# --- rotation parameterizations -------------------------------------------


def quat_to_rot(q) -> np.ndarray:
    """Rotation matrix from a (w, x, y, z) quaternion (normalized first)."""
    q = np.asarray(q, dtype=float).reshape(4)
    n = np.linalg.norm(q)
    if n < 1e-12:
        raise ValueError("zero quaternion")
    w, x, y, z = q / n
    return np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - z * w), 2 * (x * z + y * w)],
        [2 * (x * y + z * w), 1 - 2 * (x * x + z * z), 2 * (y * z - x * w)],
        [2 * (x * z - y * w), 2 * (y * z + x * w), 1 - 2 * (x * x + y * y)],
    ])


def rot_to_quat(R) -> np.ndarray:
    """(w, x, y, z) quaternion from a rotation matrix, w >= 0."""
    R = np.asarray(R, dtype=float)
    t = np.trace(R)
    if t > 0.0:
        s = np.sqrt(t + 1.0) * 2.0
        q = np.array([0.25 * s, (R[2, 1] - R[1, 2]) / s,
                      (R[0, 2] - R[2, 0]) / s, (R[1, 0] - R[0, 1]) / s])
    else:
        i = int(np.argmax(np.diag(R)))
        j, k = (i + 1) % 3, (i + 2) % 3
        s = np.sqrt(max(1e-15, 1.0 + R[i, i] - R[j, j] - R[k, k])) * 2.0
        q = np.empty(4)
        q[0] = (R[k, j] - R[j, k]) / s
        q[1 + i] = 0.25 * s
        q[1 + j] = (R[j, i] + R[i, j]) / s
        q[1 + k] = (R[k, i] + R[i, k]) / s
    if q[0] < 0.0:
        q = -q
    return q / np.linalg.norm(q)


def quat_normalize(q) -> np.ndarray:
    q = np.asarray(q, dtype=float).reshape(4)
    return q / np.linalg.norm(q)


def rot_exp(w) -> np.ndarray:
    """Matrix exponential of skew(w) (Rodrigues)."""
    w = np.asarray(w, dtype=float).reshape(3)
    th = np.linalg.norm(w)
    K = skew(w)
    if th < 1e-10:
        return np.eye(3) + K + 0.5 * (K @ K)
    return np.eye(3) + np.sin(th) / th * K + (1 - np.cos(th)) / th**2 * (K @ K)


def rot_log(R) -> np.ndarray:
    """Rotation vector of R (inverse of rot_exp), angle in [0, pi]."""
    R = np.asarray(R, dtype=float)
    c = np.clip((np.trace(R) - 1.0) * 0.5, -1.0, 1.0)
    th = np.arccos(c)
    if th < 1e-8:
        return 0.5 * np.array([R[2, 1] - R[1, 2], R[0, 2] - R[2, 0], R[1, 0] - R[0, 1]])
    if th > np.pi - 1e-6:
        # near pi the antisymmetric part degenerates; recover axis from R + I
        A = R + np.eye(3)
        axis = A[:, int(np.argmax(np.diag(A)))]
        axis = axis / np.linalg.norm(axis)
        w = 0.5 * np.array([R[2, 1] - R[1, 2], R[0, 2] - R[2, 0], R[1, 0] - R[0, 1]])
        if w @ axis < 0.0:
            axis = -axis
        return th * axis
    return th / (2.0 * np.sin(th)) * np.array(
        [R[2, 1] - R[1, 2], R[0, 2] - R[2, 0], R[1, 0] - R[0, 1]])
