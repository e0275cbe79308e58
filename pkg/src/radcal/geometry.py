"""Rotations, rigid poses and 1D radial poses.

Conventions: a pose maps points *from* a source frame *into* a target frame,
``X_target = R @ X_source + t``.  ``a.compose(b)`` applies ``b`` first, so
``(a.compose(b)).apply(X) == a.apply(b.apply(X))``.

A :class:`RadialPose` is the top two rows of a rigid pose: it determines the
radial line a point projects onto, but not the translation along the optical
axis.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DegenerateProjection

EPS = 1e-12


# ---------------------------------------------------------------------------
# SO(3) helpers (vectorized over leading axes)
# ---------------------------------------------------------------------------


def hat(w):
    """Skew-symmetric matrix of a 3-vector, or of each row of an (n, 3) array."""
    w = np.asarray(w, dtype=float)
    out = np.zeros(w.shape[:-1] + (3, 3))
    out[..., 0, 1] = -w[..., 2]
    out[..., 0, 2] = w[..., 1]
    out[..., 1, 0] = w[..., 2]
    out[..., 1, 2] = -w[..., 0]
    out[..., 2, 0] = -w[..., 1]
    out[..., 2, 1] = w[..., 0]
    return out


def so3_exp(w):
    """Rodrigues formula; ``w`` is (3,) or (n, 3)."""
    w = np.asarray(w, dtype=float)
    theta = np.linalg.norm(w, axis=-1)[..., None, None]
    K = hat(w)
    small = theta < 1e-8
    safe = np.where(small, 1.0, theta)
    a = np.where(small, 1.0 - theta**2 / 6.0, np.sin(safe) / safe)
    b = np.where(small, 0.5 - theta**2 / 24.0, (1.0 - np.cos(safe)) / safe**2)
    return np.eye(3) + a * K + b * (K @ K)


def so3_log(R):
    """Rotation vector of a rotation matrix (or stack of them)."""
    R = np.asarray(R, dtype=float)
    q = quat_from_matrix(R)
    # q and -q are the same rotation; take the short way round.
    q = np.where(q[..., :1] < 0.0, -q, q)
    v = q[..., 1:]
    s = np.linalg.norm(v, axis=-1)
    angle = 2.0 * np.arctan2(s, q[..., 0])
    small = s < 1e-12
    scale = np.where(small, 2.0 / np.where(small, q[..., 0], 1.0), angle / np.where(small, 1.0, s))
    return v * scale[..., None]


def so3_right_jacobian_inv(phi):
    """Inverse right Jacobian of SO(3) at rotation vector ``phi`` (3,)."""
    phi = np.asarray(phi, dtype=float)
    theta = np.linalg.norm(phi)
    K = hat(phi)
    if theta < 1e-6:
        return np.eye(3) + 0.5 * K + (K @ K) / 12.0
    c = 1.0 / theta**2 - (1.0 + np.cos(theta)) / (2.0 * theta * np.sin(theta))
    return np.eye(3) + 0.5 * K + c * (K @ K)


def rotation_angle(R):
    """Geodesic angle (radians) of a rotation matrix, stable near 0 and pi."""
    return float(np.linalg.norm(so3_log(R)))


def matrix_from_quat(q):
    q = np.asarray(q, dtype=float)
    w, x, y, z = q[..., 0], q[..., 1], q[..., 2], q[..., 3]
    out = np.empty(q.shape[:-1] + (3, 3))
    out[..., 0, 0] = 1 - 2 * (y * y + z * z)
    out[..., 0, 1] = 2 * (x * y - w * z)
    out[..., 0, 2] = 2 * (x * z + w * y)
    out[..., 1, 0] = 2 * (x * y + w * z)
    out[..., 1, 1] = 1 - 2 * (x * x + z * z)
    out[..., 1, 2] = 2 * (y * z - w * x)
    out[..., 2, 0] = 2 * (x * z - w * y)
    out[..., 2, 1] = 2 * (y * z + w * x)
    out[..., 2, 2] = 1 - 2 * (x * x + y * y)
    return out


def quat_from_matrix(R):
    """Shepperd's method, vectorized. Returns (w, x, y, z) with w >= 0."""
    R = np.asarray(R, dtype=float)
    if R.shape == (3, 3):
        return _quat_from_single(R)
    m = R.reshape(-1, 3, 3)
    r00, r01, r02 = m[:, 0, 0], m[:, 0, 1], m[:, 0, 2]
    r10, r11, r12 = m[:, 1, 0], m[:, 1, 1], m[:, 1, 2]
    r20, r21, r22 = m[:, 2, 0], m[:, 2, 1], m[:, 2, 2]
    # 4 * q_k^2 for each component; divide by the largest to stay stable.
    cand = np.stack(
        [1 + r00 + r11 + r22, 1 + r00 - r11 - r22, 1 - r00 + r11 - r22, 1 - r00 - r11 + r22], axis=1
    )
    k = np.argmax(cand, axis=1)
    s = 2.0 * np.sqrt(np.maximum(cand[np.arange(len(k)), k], 0.0))
    rows = np.stack(
        [
            np.stack([0.25 * s, (r21 - r12) / s, (r02 - r20) / s, (r10 - r01) / s], axis=1),
            np.stack([(r21 - r12) / s, 0.25 * s, (r01 + r10) / s, (r02 + r20) / s], axis=1),
            np.stack([(r02 - r20) / s, (r01 + r10) / s, 0.25 * s, (r12 + r21) / s], axis=1),
            np.stack([(r10 - r01) / s, (r02 + r20) / s, (r12 + r21) / s, 0.25 * s], axis=1),
        ],
        axis=1,
    )
    q = rows[np.arange(len(k)), k]
    q[q[:, 0] < 0] *= -1.0
    q /= np.linalg.norm(q, axis=1, keepdims=True)
    return q.reshape(R.shape[:-2] + (4,))


def _quat_from_single(m):
    r00, r01, r02, r10, r11, r12, r20, r21, r22 = m.ravel().tolist()
    tr = r00 + r11 + r22
    if tr >= max(r00, r11, r22):
        s = 2.0 * math.sqrt(max(1.0 + tr, 0.0))
        q = (0.25 * s, (r21 - r12) / s, (r02 - r20) / s, (r10 - r01) / s)
    elif r00 >= r11 and r00 >= r22:
        s = 2.0 * math.sqrt(max(1.0 + r00 - r11 - r22, 0.0))
        q = ((r21 - r12) / s, 0.25 * s, (r01 + r10) / s, (r02 + r20) / s)
    elif r11 >= r22:
        s = 2.0 * math.sqrt(max(1.0 - r00 + r11 - r22, 0.0))
        q = ((r02 - r20) / s, (r01 + r10) / s, 0.25 * s, (r12 + r21) / s)
    else:
        s = 2.0 * math.sqrt(max(1.0 - r00 - r11 + r22, 0.0))
        q = ((r10 - r01) / s, (r02 + r20) / s, (r12 + r21) / s, 0.25 * s)
    n = math.sqrt(sum(c * c for c in q))
    sign = -1.0 if q[0] < 0 else 1.0
    return np.array([sign * c / n for c in q])


def quat_multiply(a, b):
    aw, ax, ay, az = a
    bw, bx, by, bz = b
    return np.array(
        [
            aw * bw - ax * bx - ay * by - az * bz,
            aw * bx + ax * bw + ay * bz - az * by,
            aw * by - ax * bz + ay * bw + az * bx,
            aw * bz + ax * by - ay * bx + az * bw,
        ]
    )


def nearest_rotation(M):
    """Closest rotation matrix to ``M`` in the Frobenius norm."""
    U, _, Vt = np.linalg.svd(M)
    D = np.diag([1.0, 1.0, np.sign(np.linalg.det(U @ Vt)) or 1.0])
    return U @ D @ Vt


# ---------------------------------------------------------------------------
# Value types
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class Rotation:
    """Unit quaternion (w, x, y, z)."""

    quat: np.ndarray

    def __post_init__(self):
        q = np.asarray(self.quat, dtype=float).reshape(4)
        n = np.linalg.norm(q)
        if not np.isfinite(n) or n < EPS:
            raise ValueError("quaternion must be finite and non-zero")
        q = q / n
        if q[0] < 0:
            q = -q
        q.setflags(write=False)
        object.__setattr__(self, "quat", q)

    @classmethod
    def identity(cls):
        return cls(np.array([1.0, 0.0, 0.0, 0.0]))

    @classmethod
    def from_matrix(cls, R):
        return cls(quat_from_matrix(np.asarray(R, dtype=float)))

    @classmethod
    def from_rotvec(cls, w):
        w = np.asarray(w, dtype=float)
        theta = np.linalg.norm(w)
        if theta < 1e-12:
            return cls(np.concatenate([[1.0], 0.5 * w]))
        return cls(np.concatenate([[np.cos(theta / 2)], np.sin(theta / 2) * w / theta]))

    @classmethod
    def random(cls, rng):
        return cls(rng.normal(size=4))

    def matrix(self):
        # Cached on first use; callers get a private copy.
        M = self.__dict__.get("_matrix")
        if M is None:
            M = matrix_from_quat(self.quat)
            object.__setattr__(self, "_matrix", M)
        return M.copy()

    def rotvec(self):
        return so3_log(self.matrix())

    def angle(self):
        return 2.0 * np.arctan2(np.linalg.norm(self.quat[1:]), abs(self.quat[0]))

    def compose(self, other):
        return Rotation(quat_multiply(self.quat, other.quat))

    def inverse(self):
        q = self.quat
        return Rotation(np.array([q[0], -q[1], -q[2], -q[3]]))

    def apply(self, X):
        return np.asarray(X, dtype=float) @ self.matrix().T

    def perturbed(self, w):
        """Left-multiplicative update ``exp(w) * self``."""
        return Rotation.from_rotvec(w).compose(self)

    def __repr__(self):
        return f"Rotation(quat={np.array2string(self.quat, precision=6)})"


@dataclass(frozen=True, eq=False)
class RigidPose:
    """SE(3) transform ``X -> R X + t``."""

    rotation: Rotation
    translation: np.ndarray

    def __post_init__(self):
        t = np.array(self.translation, dtype=float).reshape(3)
        t.setflags(write=False)
        object.__setattr__(self, "translation", t)

    @classmethod
    def identity(cls):
        return cls(Rotation.identity(), np.zeros(3))

    @classmethod
    def from_matrix(cls, M):
        M = np.asarray(M, dtype=float)
        return cls(Rotation.from_matrix(M[:3, :3]), M[:3, 3])

    @classmethod
    def from_Rt(cls, R, t):
        return cls(Rotation.from_matrix(R), t)

    @classmethod
    def random(cls, rng, scale=1.0):
        return cls(Rotation.random(rng), rng.normal(scale=scale, size=3))

    @property
    def R(self):
        return self.rotation.matrix()

    @property
    def t(self):
        return self.translation

    def matrix(self):
        M = np.eye(4)
        M[:3, :3] = self.R
        M[:3, 3] = self.translation
        return M

    def apply(self, X):
        return np.asarray(X, dtype=float) @ self.R.T + self.translation

    def compose(self, other):
        return RigidPose(
            self.rotation.compose(other.rotation),
            self.R @ other.translation + self.translation,
        )

    def inverse(self):
        inv = self.rotation.inverse()
        return RigidPose(inv, -(inv.matrix() @ self.translation))

    def center(self):
        """Origin of this pose's target frame, expressed in its source frame."""
        return -(self.R.T @ self.translation)

    def radial(self):
        return radial_from_full(self)

    def __repr__(self):
        return f"RigidPose(R={self.rotation!r}, t={np.array2string(self.translation, precision=6)})"


@dataclass(frozen=True, eq=False)
class RadialPose:
    """Top two rows ``[A | b]`` of a rigid pose.

    Stored as the full rotation whose first two rows are ``A`` (the third row
    is their cross product) plus the 2-vector ``b``.
    """

    rotation: Rotation
    translation: np.ndarray

    def __post_init__(self):
        b = np.array(self.translation, dtype=float).reshape(2)
        b.setflags(write=False)
        object.__setattr__(self, "translation", b)

    @classmethod
    def identity(cls):
        return cls(Rotation.identity(), np.zeros(2))

    @classmethod
    def from_matrix(cls, M):
        """Canonical radial pose from any 2x4 matrix proportional to one.

        Rows of the 3x3 part are made orthonormal (polar factor) and the
        translation is divided by the same scale.  The sign is left as given;
        use :meth:`oriented` to fix it from data.
        """
        M = np.asarray(M, dtype=float).reshape(2, 4)
        U, s, Vt = np.linalg.svd(M[:, :3], full_matrices=False)
        if s[-1] <= EPS * max(s[0], 1.0):
            raise DegenerateProjection("2x3 block is rank deficient")
        A = U @ Vt
        scale = 0.5 * (s[0] + s[1])
        (a0, a1, a2), (b0, b1, b2) = A
        R = np.vstack([A, [a1 * b2 - a2 * b1, a2 * b0 - a0 * b2, a0 * b1 - a1 * b0]])
        return cls(Rotation.from_matrix(R), M[:, 3] / scale)

    @property
    def A(self):
        return self.rotation.matrix()[:2]

    @property
    def b(self):
        return self.translation

    def matrix(self):
        return np.hstack([self.A, self.translation[:, None]])

    def apply(self, X):
        """Radial projection direction ``u = A X + b`` for (3,) or (n, 3) points."""
        return np.asarray(X, dtype=float) @ self.A.T + self.translation

    def flipped(self):
        """The same radial lines with the opposite orientation (``-[A | b]``)."""
        flip = Rotation(np.array([0.0, 0.0, 0.0, 1.0]))  # 180 deg about z
        return RadialPose(flip.compose(self.rotation), -self.translation)

    def oriented(self, X, v):
        """Fix the sign so most points project to the observed side of their line."""
        u = self.apply(X)
        votes = np.sum(u * np.asarray(v, dtype=float), axis=-1)
        if np.count_nonzero(votes > 0) * 2 < np.count_nonzero(votes != 0):
            return self.flipped()
        return self

    def compose(self, pose):
        """``[A | b] @ pose`` as a radial pose."""
        R = self.rotation.matrix()
        return RadialPose(
            self.rotation.compose(pose.rotation),
            (R @ pose.translation)[:2] + self.translation,
        )

    def extend(self, t_z=0.0):
        """Full rigid pose with the given forward translation."""
        return RigidPose(self.rotation, np.array([self.translation[0], self.translation[1], t_z]))

    def optical_axis(self):
        """Principal axis direction (third rotation row) in the source frame."""
        return self.rotation.matrix()[2]

    def __repr__(self):
        return f"RadialPose(R={self.rotation!r}, b={np.array2string(self.translation, precision=6)})"


def radial_from_full(pose):
    """First two rows of a rigid pose, as a canonical radial pose."""
    return RadialPose(pose.rotation, pose.translation[:2])


def radial_residual(pose, principal_point, X, x):
    """Radial reprojection residual ``pi_r(u, v) - v``.

    ``u = A X + b`` is the projected radial direction and ``v`` the observed
    pixel relative to the principal point.  Works on single points or on
    (n, 3) / (n, 2) arrays.
    """
    u = pose.apply(X)
    v = np.asarray(x, dtype=float) - np.asarray(principal_point, dtype=float)
    uu = np.sum(u * u, axis=-1)
    if np.any(uu <= EPS**2):
        raise DegenerateProjection("point projects onto the distortion center")
    coef = np.sum(u * v, axis=-1) / uu
    return coef[..., None] * u - v


def radial_distance(u, v):
    """Signed distance of ``v`` from the line spanned by ``u`` (vectorized)."""
    nu = np.linalg.norm(u, axis=-1)
    return (u[..., 0] * v[..., 1] - u[..., 1] * v[..., 0]) / nu
