"""Closed-form and minimal solvers.

* :func:`solve_p5p_radial` -- 1D radial absolute pose from five 2D-3D
  correspondences (radial alignment constraint).
* :func:`solve_upgrade_linear` -- focal length, forward translation and
  division-model distortion from points already in the camera frame.
* :func:`solve_rig_pose` -- rig pose from radial camera poses with known
  radial extrinsics (orthogonal Procrustes + linear translation).
* :func:`align_rigid` -- least-squares rigid alignment of two point sets.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .camera import DivisionModel
from .errors import DegenerateConfiguration, NoValidSolution, ParallelAxesDegenerate
from .geometry import RadialPose, RigidPose, Rotation

REAL_ROOT_TOL = 1e-8
RAC_TOL = 1e-6


@dataclass(frozen=True)
class Correspondence2D3D:
    pixel: np.ndarray
    point: np.ndarray
    point_id: int = -1

    def centered(self, principal_point):
        return CenteredCorrespondence(np.asarray(self.pixel, float) - principal_point, np.asarray(self.point, float))


@dataclass(frozen=True)
class CenteredCorrespondence:
    v: np.ndarray
    point: np.ndarray


# ---------------------------------------------------------------------------
# Five-point 1D radial pose
# ---------------------------------------------------------------------------


def _quadric(U, W):
    """Both row constraints as 3x3 symmetric forms in z = (alpha, beta, 1)."""
    C1 = U @ U.T - W @ W.T
    C2 = 0.5 * (U @ W.T + W @ U.T)
    return C1, C2


def _intersect_conics(C1, C2):
    """Real intersections of two conics zT C z = 0 with z = (alpha, beta, 1).

    Each conic is a quadratic in beta with coefficients polynomial in alpha;
    their resultant in beta is a quartic in alpha.  Returns None when the
    quartic degenerates (a solution at infinity of this affine slice).
    """
    a1, a2 = C1[1, 1], C2[1, 1]
    p1, q1 = 2 * C1[0, 1], 2 * C1[1, 2]
    p2, q2 = 2 * C2[0, 1], 2 * C2[1, 2]
    c10, c11, c12 = C1[0, 0], 2 * C1[0, 2], C1[2, 2]
    c20, c21, c22 = C2[0, 0], 2 * C2[0, 2], C2[2, 2]
    # e = a1 c2 - a2 c1, g = a1 b2 - a2 b1, h = b1 c2 - b2 c1
    e0, e1, e2 = a1 * c20 - a2 * c10, a1 * c21 - a2 * c11, a1 * c22 - a2 * c12
    g0, g1 = a1 * p2 - a2 * p1, a1 * q2 - a2 * q1
    h3 = p1 * c20 - p2 * c10
    h2 = p1 * c21 + q1 * c20 - p2 * c11 - q2 * c10
    h1 = p1 * c22 + q1 * c21 - p2 * c12 - q2 * c11
    h0 = q1 * c22 - q2 * c12
    res = np.array(
        [
            e0 * e0 - g0 * h3,
            2 * e0 * e1 - g0 * h2 - g1 * h3,
            e1 * e1 + 2 * e0 * e2 - g0 * h1 - g1 * h2,
            2 * e1 * e2 - g0 * h0 - g1 * h1,
            e2 * e2 - g1 * h0,
        ]
    )
    scale = np.abs(res).max()
    if scale == 0 or abs(res[0]) < 1e-12 * scale:
        return None
    companion = np.zeros((4, 4))
    companion[0, :] = -res[1:] / res[0]
    companion[1, 0] = companion[2, 1] = companion[3, 2] = 1.0
    roots = np.linalg.eigvals(companion)
    out = []
    for root in roots:
        if abs(root.imag) > REAL_ROOT_TOL * max(abs(root.real), 1.0):
            continue
        alpha = root.real
        den = -(g0 * alpha + g1)
        num = (e0 * alpha + e1) * alpha + e2
        if abs(den) > 1e-12 * (abs(g0 * alpha) + abs(g1)):
            out.append(_polish(C1, C2, alpha, num / den))
            continue
        # beta not determined by elimination: take the first conic's root closest to the second.
        for beta in np.roots([a1, p1 * alpha + q1, (c10 * alpha + c11) * alpha + c12]):
            if abs(beta.imag) <= REAL_ROOT_TOL * max(abs(beta.real), 1.0):
                z = np.array([alpha, beta.real, 1.0])
                if abs(z @ C2 @ z) < 1e-6 * np.abs(C2).max():
                    out.append(_polish(C1, C2, alpha, beta.real))
    return out


def _polish(C1, C2, alpha, beta, steps=2):
    """Newton steps on the two conic equations."""
    (a00, a01, a02), (_, a11, a12), (_, _, a22) = C1.tolist()
    (b00, b01, b02), (_, b11, b12), (_, _, b22) = C2.tolist()
    for _ in range(steps):
        w10, w11 = a00 * alpha + a01 * beta + a02, a01 * alpha + a11 * beta + a12
        w20, w21 = b00 * alpha + b01 * beta + b02, b01 * alpha + b11 * beta + b12
        f1 = alpha * w10 + beta * w11 + a02 * alpha + a12 * beta + a22
        f2 = alpha * w20 + beta * w21 + b02 * alpha + b12 * beta + b22
        j11, j12, j21, j22 = 2 * w10, 2 * w11, 2 * w20, 2 * w21
        det = j11 * j22 - j12 * j21
        if det == 0 or not math.isfinite(det):
            break
        da = (-f1 * j22 + f2 * j12) / det
        db = (-f2 * j11 + f1 * j21) / det
        if not (math.isfinite(da) and math.isfinite(db)):
            break
        alpha, beta = alpha + da, beta + db
    return alpha, beta


def _rac_matrix(v, Xh):
    return np.hstack([-v[:, 1:2] * Xh, v[:, 0:1] * Xh])


def solve_p5p_radial(corrs):
    """All 1D radial poses consistent with five centered correspondences.

    ``corrs`` is a sequence of :class:`CenteredCorrespondence` or a tuple
    ``(v, X)`` of (5, 2) and (5, 3) arrays.  Returns up to four canonical
    :class:`RadialPose` candidates; raises :class:`DegenerateConfiguration`
    when the constraints do not pin down a finite solution set.
    """
    v, X = _unpack(corrs)
    if len(v) != 5:
        raise ValueError(f"solve_p5p_radial needs exactly 5 correspondences, got {len(v)}")
    norms = np.linalg.norm(v, axis=1)
    if np.any(norms <= 1e-12):
        raise DegenerateConfiguration("observation at the principal point carries no radial line")
    vn = v / norms[:, None]
    mean = X.mean(axis=0)
    scale = np.sqrt(np.mean(np.sum((X - mean) ** 2, axis=1)))
    if scale <= 1e-12:
        raise DegenerateConfiguration("coincident 3D points")
    Xh = np.hstack([(X - mean) / scale, np.ones((5, 1))])
    M = _rac_matrix(vn, Xh)
    _, s, Vt = np.linalg.svd(M)
    if s[4] <= 1e-10 * s[0]:
        raise DegenerateConfiguration("radial alignment constraints are rank deficient")
    basis = Vt[5:8]

    poses = []
    for order in ((0, 1, 2), (1, 2, 0), (2, 0, 1)):
        B = basis[list(order)]
        U = B[:, 0:3]
        W = B[:, 4:7]
        sols = _intersect_conics(*_quadric(U, W))
        if sols:
            for alpha, beta in sols:
                P = (alpha * B[0] + beta * B[1] + B[2]).reshape(2, 4)
                pose = _denormalize(P, mean, scale)
                if pose is not None:
                    poses.append(pose.oriented(X, v))
            if poses:
                break
    poses = [p for p in poses if _max_rac_error(p, X, vn) <= RAC_TOL]
    if not poses:
        raise DegenerateConfiguration("no real solution for the radial pose")
    return _dedupe(poses)


def _denormalize(P, mean, scale):
    A = P[:, :3] / scale
    b = P[:, 3] - A @ mean
    try:
        return RadialPose.from_matrix(np.hstack([A, b[:, None]]))
    except Exception:
        return None


def _max_rac_error(pose, X, vn):
    u = pose.apply(X)
    u = u / np.linalg.norm(u, axis=1, keepdims=True)
    return float(np.max(np.abs(u[:, 0] * vn[:, 1] - u[:, 1] * vn[:, 0])))


def _dedupe(poses, tol=1e-9):
    out = []
    for p in poses:
        if not any(np.max(np.abs(p.matrix() - q.matrix())) <= tol for q in out):
            out.append(p)
    return out


def _unpack(corrs):
    if isinstance(corrs, tuple) and len(corrs) == 2 and np.ndim(corrs[0]) == 2:
        v, X = corrs
    else:
        v = [c.v for c in corrs]
        X = [c.point for c in corrs]
    return np.asarray(v, dtype=float).reshape(-1, 2), np.asarray(X, dtype=float).reshape(-1, 3)


def fit_radial_pose_linear(v, X):
    """Least-squares radial pose from n >= 5 centered correspondences (algebraic error)."""
    v = np.asarray(v, dtype=float)
    X = np.asarray(X, dtype=float)
    vn = v / np.linalg.norm(v, axis=1, keepdims=True)
    mean = X.mean(axis=0)
    scale = np.sqrt(np.mean(np.sum((X - mean) ** 2, axis=1)))
    Xh = np.hstack([(X - mean) / scale, np.ones((len(X), 1))])
    M = _rac_matrix(vn, Xh)
    _, s, Vt = np.linalg.svd(M, full_matrices=False)
    if len(s) < 8 or s[6] <= 1e-10 * s[0]:
        raise DegenerateConfiguration("radial alignment constraints are rank deficient")
    pose = _denormalize(Vt[-1].reshape(2, 4), mean, scale)
    if pose is None:
        raise DegenerateConfiguration("linear radial pose is rank deficient")
    return pose.oriented(X, v)


# ---------------------------------------------------------------------------
# Upgrade: focal, forward translation, division distortion
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class UpgradeSolution:
    focal: float
    t_z: float
    division: DivisionModel

    def __post_init__(self):
        if not self.focal > 0:
            raise ValueError("focal must be positive")

    @property
    def unknowns(self):
        """The linear unknowns ``(t_z, f, f mu_1, ...)``."""
        return np.array([self.t_z, self.focal] + [self.focal * m for m in self.division.mu])

    def radial_errors(self, v, Z):
        """First-order distance (pixels) of each observed radius from the model.

        The per-point constraint is ``F(r) = r (Z_z + t_z) - f R D(r) = 0``
        with ``D`` the division denominator; the error is ``F / F'(r)``.
        Points behind the camera get ``inf``.
        """
        r = np.linalg.norm(v, axis=1)
        R = np.hypot(Z[:, 0], Z[:, 1])
        depth = Z[:, 2] + self.t_z
        D = self.division.denominator(r)
        dD = np.zeros_like(r)
        for k, m in enumerate(self.division.mu, start=1):
            dD += 2 * k * m * r ** (2 * k - 1)
        F = r * depth - self.focal * R * D
        dF = depth - self.focal * R * dD
        with np.errstate(divide="ignore", invalid="ignore"):
            err = np.abs(F / dF)
        err[(depth <= 0) | ~np.isfinite(err)] = np.inf
        return err


def upgrade_linear_system(v, Z, n_dist):
    """Rows ``[r, -R, -R r^2, ...]`` and right-hand side ``-r Z_z``."""
    r = np.linalg.norm(v, axis=1)
    R = np.hypot(Z[:, 0], Z[:, 1])
    cols = [r, -R]
    for k in range(1, n_dist + 1):
        cols.append(-R * r ** (2 * k))
    return np.stack(cols, axis=1), -r * Z[:, 2]


def upgrade_linear_residuals(solution, v, Z):
    """Algebraic residuals ``r (Z_z + t_z) - f R (1 + sum mu_k r^2k)``."""
    A, rhs = upgrade_linear_system(v, Z, len(solution.division.mu))
    return A @ solution.unknowns - rhs


def solve_upgrade_linear(v, Z, n_dist=2, max_radius=None, min_front_fraction=0.9):
    """Focal, forward translation and division distortion from camera-frame points.

    ``v`` are observed pixels relative to the principal point and ``Z`` the
    camera-frame points up to the unknown forward translation.  With exactly
    ``n_dist + 2`` points the linear system is solved exactly, otherwise in the
    least-squares sense.  Returns a one-element list.
    """
    v = np.asarray(v, dtype=float).reshape(-1, 2)
    Z = np.asarray(Z, dtype=float).reshape(-1, 3)
    if not 0 <= n_dist <= 2:
        raise ValueError("n_dist must be 0, 1 or 2")
    if len(v) < n_dist + 2:
        raise ValueError(f"need at least {n_dist + 2} correspondences, got {len(v)}")
    r = np.linalg.norm(v, axis=1)
    if np.ptp(r) <= 1e-9 * max(r.max(), 1.0):
        raise DegenerateConfiguration("all observed radii are equal")
    A, rhs = upgrade_linear_system(v, Z, n_dist)
    col = np.linalg.norm(A, axis=0)
    if np.any(col == 0):
        raise DegenerateConfiguration("zero column in upgrade system")
    As = A / col
    U, s, Vt = np.linalg.svd(As, full_matrices=False)
    if s[-1] <= 1e-12 * s[0]:
        raise DegenerateConfiguration("upgrade system is rank deficient")
    x = (Vt.T @ ((U.T @ rhs) / s)) / col
    t_z, f = x[0], x[1]
    if not f > 0:
        raise NoValidSolution(f"non-positive focal length {f:.6g}")
    division = DivisionModel(tuple(x[2:] / f))
    r_max = r.max() if max_radius is None else max_radius
    if not division.is_monotone(r_max):
        raise NoValidSolution("division model is not monotone on the observed radii")
    if np.mean(Z[:, 2] + t_z > 0) < min_front_fraction:
        raise NoValidSolution("upgrade puts the points behind the camera")
    return [UpgradeSolution(float(f), float(t_z), division)]


# ---------------------------------------------------------------------------
# Rig pose from radial constraints
# ---------------------------------------------------------------------------


def axes_conditioning(extrinsics):
    """sigma_min / sigma_max of the stacked 2x3 radial blocks."""
    A = np.vstack([p.A for p in extrinsics])
    s = np.linalg.svd(A, compute_uv=False)
    return s[-1] / s[0] if len(s) == 3 else 0.0


def solve_rig_pose(assigned, conditioning=1e-6):
    """Rig pose ``Q`` with ``T_ij ~ P_i Q`` for every (P_i, T_ij) radial pair.

    Rotation from orthogonal Procrustes on the stacked 2x3 blocks, translation
    by linear least squares.  Raises :class:`ParallelAxesDegenerate` when the
    stacked blocks do not span 3D (all principal axes parallel).
    """
    assigned = list(assigned)
    if len(assigned) < 2:
        raise ValueError("solve_rig_pose needs at least two cameras")
    M = np.vstack([p.A for p, _ in assigned])
    N = np.vstack([t.A for _, t in assigned])
    s = np.linalg.svd(M, compute_uv=False)
    if s[-1] <= conditioning * s[0]:
        raise ParallelAxesDegenerate(
            f"principal axes are (near) parallel: sigma_min/sigma_max = {s[-1] / s[0]:.3g}"
        )
    U, _, Vt = np.linalg.svd(M.T @ N)
    D = np.diag([1.0, 1.0, np.sign(np.linalg.det(U @ Vt))])
    R = U @ D @ Vt
    rhs = np.concatenate([t.b - p.b for p, t in assigned])
    t, *_ = np.linalg.lstsq(M, rhs, rcond=None)
    return RigidPose(Rotation.from_matrix(R), t)


# ---------------------------------------------------------------------------
# Rigid alignment
# ---------------------------------------------------------------------------


def align_rigid(source, target, weights=None):
    """Rigid transform ``G`` minimizing ``sum w ||G(source) - target||^2`` (no scale)."""
    src = np.asarray(source, dtype=float).reshape(-1, 3)
    dst = np.asarray(target, dtype=float).reshape(-1, 3)
    if src.shape != dst.shape:
        raise ValueError("source and target must have the same shape")
    if len(src) < 3:
        raise DegenerateConfiguration("need at least 3 point pairs")
    w = np.ones(len(src)) if weights is None else np.asarray(weights, dtype=float)
    w = w / w.sum()
    mu_s = w @ src
    mu_d = w @ dst
    cs = src - mu_s
    cd = dst - mu_d
    sv = np.linalg.svd(cs * np.sqrt(w)[:, None], compute_uv=False)
    if sv[1] <= 1e-9 * max(sv[0], 1e-300):
        raise DegenerateConfiguration("points are collinear")
    H = (cs * w[:, None]).T @ cd
    U, _, Vt = np.linalg.svd(H)
    D = np.diag([1.0, 1.0, np.sign(np.linalg.det(Vt.T @ U.T))])
    R = Vt.T @ D @ U.T
    return RigidPose(Rotation.from_matrix(R), mu_d - R @ mu_s)
