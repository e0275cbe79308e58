"""The refinement problems of the calibration pipeline.

All four share the :mod:`.lm` engine and the Cauchy loss:

* :func:`optimize_pose_graph` -- radial extrinsics and rig poses fit to the
  per-image radial poses (rotation angle^2 + weighted 2-row translation^2).
* :func:`radial_bundle_adjust` -- radial reprojection error over radial
  extrinsics, rig poses and principal points, map points fixed.
* :func:`refine_upgrade` -- single-camera intrinsics and forward translation
  from camera-frame points.
* :func:`full_bundle_adjust` -- full reprojection error over extrinsics,
  rig poses, intrinsics and optionally the map points.

Rotations are updated on the left, ``R <- exp(w) R``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..camera import CameraIntrinsics, CameraModel, project_with_jacobians
from ..errors import NoValidSolution, NumericalDomain
from ..geometry import RadialPose, RigidPose, Rotation, hat, so3_log
from ..robust import CauchyLoss
from .lm import JacobianBuilder, LeastSquaresProblem, LmConfig, ParamSet, lm_minimize, robust_cost


@dataclass
class Observations:
    """Flat observation table: camera index, rig-pose index, point row, pixel."""

    camera: np.ndarray
    frameset: np.ndarray
    point: np.ndarray
    pixel: np.ndarray

    def __post_init__(self):
        self.camera = np.asarray(self.camera, dtype=np.int64)
        self.frameset = np.asarray(self.frameset, dtype=np.int64)
        self.point = np.asarray(self.point, dtype=np.int64)
        self.pixel = np.asarray(self.pixel, dtype=float).reshape(-1, 2)

    def __len__(self):
        return len(self.camera)

    def subset(self, mask):
        return Observations(self.camera[mask], self.frameset[mask], self.point[mask], self.pixel[mask])


def _inv_right_jacobian_batch(phi):
    """Vectorized inverse right Jacobian of SO(3)."""
    theta = np.linalg.norm(phi, axis=1)
    K = hat(phi)
    K2 = K @ K
    small = theta < 1e-6
    ts = np.where(small, 1.0, theta)
    c = np.where(small, 1.0 / 12.0, 1.0 / ts**2 - (1.0 + np.cos(ts)) / (2.0 * ts * np.sin(ts)))
    return np.eye(3) + 0.5 * K + c[:, None, None] * K2


def _stack_rotations(poses):
    return np.array([p.rotation.quat for p in poses])


# ---------------------------------------------------------------------------
# Radial bundle adjustment
# ---------------------------------------------------------------------------


class RadialBundleProblem(LeastSquaresProblem):
    def __init__(self, extrinsics, rig_poses, principal_points, obs, points, reference=0, refine_pp=None):
        self.obs = obs
        self.X = np.asarray(points, dtype=float)[obs.point]
        n_cam = len(extrinsics)
        rig_free = np.ones(len(rig_poses), bool)
        rig_free[reference] = False
        pp_free = np.ones(n_cam, bool) if refine_pp is None else np.asarray(refine_pp, bool)
        p = ParamSet()
        p.add("cam_rot", _stack_rotations(extrinsics), "rotation")
        p.add("cam_b", np.array([e.translation for e in extrinsics]))
        p.add("pp", np.asarray(principal_points, dtype=float).reshape(n_cam, 2), free=pp_free)
        p.add("rig_rot", _stack_rotations(rig_poses), "rotation", free=rig_free)
        p.add("rig_t", np.array([q.translation for q in rig_poses]), free=rig_free)
        self.params = p.finalize()

    def evaluate(self, jacobian=True):
        p, o = self.params, self.obs
        Ri = p["cam_rot"].matrices()[o.camera]
        Rj = p["rig_rot"].matrices()[o.frameset]
        RjX = np.einsum("nij,nj->ni", Rj, self.X)
        Y = RjX + p["rig_t"].values[o.frameset]
        W = np.einsum("nij,nj->ni", Ri, Y)
        u = W[:, :2] + p["cam_b"].values[o.camera]
        v = o.pixel - p["pp"].values[o.camera]
        nu = np.maximum(np.linalg.norm(u, axis=1), 1e-300)
        s = (u[:, 0] * v[:, 1] - u[:, 1] * v[:, 0]) / nu
        r = s[:, None]
        if not jacobian:
            return r, None
        ds_du = np.stack([v[:, 1] / nu - s * u[:, 0] / nu**2, -v[:, 0] / nu - s * u[:, 1] / nu**2], axis=1)
        ds_dv = np.stack([-u[:, 1] / nu, u[:, 0] / nu], axis=1)
        A = Ri[:, :2, :]
        g = ds_du[:, None, :]  # (n,1,2)
        gA = g @ A  # (n,1,3)
        jb = JacobianBuilder(len(s), 1, p)
        jb.add("cam_rot", o.camera, g @ (-hat(W))[:, :2, :])
        jb.add("cam_b", o.camera, g)
        jb.add("pp", o.camera, -ds_dv[:, None, :])
        jb.add("rig_rot", o.frameset, gA @ (-hat(RjX)))
        jb.add("rig_t", o.frameset, gA)
        return r, jb.build()

    def extrinsics(self):
        p = self.params
        return [RadialPose(Rotation(q), b) for q, b in zip(p["cam_rot"].values, p["cam_b"].values)]

    def rig_poses(self):
        p = self.params
        return [RigidPose(Rotation(q), t) for q, t in zip(p["rig_rot"].values, p["rig_t"].values)]


@dataclass
class RadialBAResult:
    extrinsics: list
    rig_poses: list
    principal_points: np.ndarray
    report: object


def radial_cost(extrinsics, rig_poses, principal_points, obs, points, loss=None):
    """Robustified radial reprojection cost (signed-distance form)."""
    prob = RadialBundleProblem(extrinsics, rig_poses, principal_points, obs, points)
    r, _ = prob.evaluate(jacobian=False)
    return robust_cost(r, CauchyLoss() if loss is None else loss)


def radial_bundle_adjust(
    extrinsics,
    rig_poses,
    principal_points,
    obs,
    points,
    reference=0,
    min_pp_observations=30,
    loss=None,
    config=None,
):
    """Refine radial extrinsics, rig poses and principal points.

    A camera's principal point is refined only if it has at least
    ``min_pp_observations`` observations spread over two or more rig poses.
    ``rig_poses[reference]`` is held fixed to remove the gauge freedom.
    """
    n_cam = len(extrinsics)
    refine_pp = np.zeros(n_cam, bool)
    for i in range(n_cam):
        sel = obs.camera == i
        refine_pp[i] = np.count_nonzero(sel) >= min_pp_observations and len(np.unique(obs.frameset[sel])) >= 2
    prob = RadialBundleProblem(extrinsics, rig_poses, principal_points, obs, points, reference, refine_pp)
    report = lm_minimize(prob, loss, config)
    return RadialBAResult(prob.extrinsics(), prob.rig_poses(), prob.params["pp"].values.copy(), report)


# ---------------------------------------------------------------------------
# Pose graph over radial poses
# ---------------------------------------------------------------------------


class PoseGraphProblem(LeastSquaresProblem):
    def __init__(self, extrinsics, rig_poses, measurements, weight=1.0, reference=0):
        """``measurements`` is a list of (camera index, rig-pose index, RadialPose)."""
        self.cam = np.array([m[0] for m in measurements], dtype=np.int64)
        self.fs = np.array([m[1] for m in measurements], dtype=np.int64)
        self.RT = np.array([m[2].rotation.matrix() for m in measurements])
        self.dT = np.array([m[2].translation for m in measurements])
        self.sqrt_w = np.sqrt(weight)
        rig_free = np.ones(len(rig_poses), bool)
        rig_free[reference] = False
        p = ParamSet()
        p.add("cam_rot", _stack_rotations(extrinsics), "rotation")
        p.add("cam_b", np.array([e.translation for e in extrinsics]))
        p.add("rig_rot", _stack_rotations(rig_poses), "rotation", free=rig_free)
        p.add("rig_t", np.array([q.translation for q in rig_poses]), free=rig_free)
        self.params = p.finalize()

    def evaluate(self, jacobian=True):
        p = self.params
        Ri = p["cam_rot"].matrices()[self.cam]
        Rj = p["rig_rot"].matrices()[self.fs]
        tj = p["rig_t"].values[self.fs]
        E = Ri @ Rj @ np.transpose(self.RT, (0, 2, 1))
        rot = so3_log(E).reshape(-1, 3)
        Rit = np.einsum("nij,nj->ni", Ri, tj)
        trans = Rit[:, :2] + p["cam_b"].values[self.cam] - self.dT
        r = np.hstack([rot, self.sqrt_w * trans])
        if not jacobian:
            return r, None
        m = len(r)
        Jl_inv = np.transpose(_inv_right_jacobian_batch(rot), (0, 2, 1))
        jb = JacobianBuilder(m, 5, p)
        J = np.zeros((m, 5, 3))
        J[:, :3] = Jl_inv
        J[:, 3:] = self.sqrt_w * (-hat(Rit))[:, :2, :]
        jb.add("cam_rot", self.cam, J)
        J = np.zeros((m, 5, 2))
        J[:, 3:] = self.sqrt_w * np.eye(2)
        jb.add("cam_b", self.cam, J)
        J = np.zeros((m, 5, 3))
        J[:, :3] = Jl_inv @ Ri
        jb.add("rig_rot", self.fs, J)
        J = np.zeros((m, 5, 3))
        J[:, 3:] = self.sqrt_w * Ri[:, :2, :]
        jb.add("rig_t", self.fs, J)
        return r, jb.build()

    def extrinsics(self):
        p = self.params
        return [RadialPose(Rotation(q), b) for q, b in zip(p["cam_rot"].values, p["cam_b"].values)]

    def rig_poses(self):
        p = self.params
        return [RigidPose(Rotation(q), t) for q, t in zip(p["rig_rot"].values, p["rig_t"].values)]


@dataclass
class PoseGraphResult:
    extrinsics: list
    rig_poses: list
    report: object


def pose_graph_cost(extrinsics, rig_poses, measurements, weight=1.0, loss=None):
    prob = PoseGraphProblem(extrinsics, rig_poses, measurements, weight)
    r, _ = prob.evaluate(jacobian=False)
    return robust_cost(r, CauchyLoss() if loss is None else loss)


def optimize_pose_graph(extrinsics, rig_poses, measurements, weight=1.0, reference=0, loss=None, config=None):
    """Fit radial extrinsics and rig poses to the measured radial poses."""
    prob = PoseGraphProblem(extrinsics, rig_poses, measurements, weight, reference)
    report = lm_minimize(prob, loss, config)
    return PoseGraphResult(prob.extrinsics(), prob.rig_poses(), report)


# ---------------------------------------------------------------------------
# Single-camera upgrade refinement
# ---------------------------------------------------------------------------


class UpgradeProblem(LeastSquaresProblem):
    def __init__(self, camera, t_z, Z, pixels):
        self.model = camera.model
        self.Z = np.asarray(Z, dtype=float)
        self.x = np.asarray(pixels, dtype=float)
        p = ParamSet()
        p.add("focal", [[camera.focal]])
        p.add("pp", [camera.principal_point], free=[False])
        p.add("dist", [camera.distortion])
        p.add("tz", [[t_z]])
        self.params = p.finalize()

    def camera(self):
        p = self.params
        return CameraIntrinsics(self.model, p["focal"].values[0, 0], p["pp"].values[0], p["dist"].values[0])

    @property
    def t_z(self):
        return float(self.params["tz"].values[0, 0])

    def evaluate(self, jacobian=True):
        p = self.params
        Zt = self.Z.copy()
        Zt[:, 2] += p["tz"].values[0, 0]
        try:
            cam = self.camera()
            pix, Jx, Jt = project_with_jacobians(cam, Zt, jacobians=jacobian)
        except (NumericalDomain, ValueError):
            if jacobian:
                raise
            return np.full((len(Zt), 2), np.inf), None
        r = pix - self.x
        if not jacobian:
            return r, None
        n = len(r)
        zeros = np.zeros(n, dtype=np.int64)
        jb = JacobianBuilder(n, 2, p)
        jb.add("focal", zeros, Jt[:, :, 0:1])
        jb.add("dist", zeros, Jt[:, :, 3:7])
        jb.add("tz", zeros, Jx[:, :, 2:3])
        return r, jb.build()


@dataclass
class UpgradeRefinement:
    camera: CameraIntrinsics
    t_z: float
    report: object
    rms_before: float
    rms_after: float


def _rms(r):
    r = np.asarray(r)
    return float(np.sqrt(np.mean(r**2))) if r.size else 0.0


def refine_upgrade(camera, t_z, Z, pixels, max_radius=None, loss=None, config=None):
    """Refine focal, distortion and forward translation of one camera.

    ``Z`` are camera-frame points up to the forward translation, ``pixels``
    their observations.  The principal point is held fixed.  Raises
    :class:`NoValidSolution` if the result has a non-positive focal length or
    a distortion profile that folds back within ``max_radius`` pixels.
    """
    prob = UpgradeProblem(camera, t_z, Z, pixels)
    r0, _ = prob.evaluate(jacobian=False)
    report = lm_minimize(prob, loss, config)
    r1, _ = prob.evaluate(jacobian=False)
    focal = prob.params["focal"].values[0, 0]
    if not focal > 0:
        raise NoValidSolution("refined focal length is not positive")
    cam = prob.camera()
    if max_radius is not None and not cam.is_monotone(max_radius):
        raise NoValidSolution("refined distortion is not monotone over the image")
    return UpgradeRefinement(cam, prob.t_z, report, _rms(r0), _rms(r1))


# ---------------------------------------------------------------------------
# Full bundle adjustment
# ---------------------------------------------------------------------------


class FullBundleProblem(LeastSquaresProblem):
    def __init__(
        self,
        extrinsics,
        rig_poses,
        intrinsics,
        obs,
        points,
        reference=0,
        optimize_points=False,
        fixed_points=(),
        fix_cameras=False,
    ):
        self.obs = obs
        self.models = [c.model for c in intrinsics]
        self.optimize_points = optimize_points
        self.points0 = np.asarray(points, dtype=float)
        self.by_camera = [np.nonzero(obs.camera == i)[0] for i in range(len(intrinsics))]
        rig_free = np.ones(len(rig_poses), bool)
        if reference is not None:
            rig_free[reference] = False
        cam_free = np.full(len(intrinsics), not fix_cameras)
        p = ParamSet()
        p.add("cam_rot", _stack_rotations(extrinsics), "rotation", free=cam_free)
        p.add("cam_t", np.array([e.translation for e in extrinsics]), free=cam_free)
        p.add("intr", np.array([c.params for c in intrinsics]), free=cam_free)
        p.add("rig_rot", _stack_rotations(rig_poses), "rotation", free=rig_free)
        p.add("rig_t", np.array([q.translation for q in rig_poses]), free=rig_free)
        if optimize_points:
            free = np.zeros(len(self.points0), bool)
            free[np.unique(obs.point)] = True
            free[list(fixed_points)] = False
            p.add("points", self.points0, free=free)
            self.params = p.finalize(eliminate="points")
        else:
            self.params = p.finalize()

    def points(self):
        return self.params["points"].values if self.optimize_points else self.points0

    def camera_frame_points(self):
        p, o = self.params, self.obs
        Ri = p["cam_rot"].matrices()[o.camera]
        Rj = p["rig_rot"].matrices()[o.frameset]
        X = self.points()[o.point]
        RjX = np.einsum("nij,nj->ni", Rj, X)
        Y = RjX + p["rig_t"].values[o.frameset]
        RiY = np.einsum("nij,nj->ni", Ri, Y)
        return Ri, Rj, RjX, RiY, RiY + p["cam_t"].values[o.camera]

    def evaluate(self, jacobian=True):
        p, o = self.params, self.obs
        Ri, Rj, RjX, RiY, Z = self.camera_frame_points()
        n = len(o)
        r = np.empty((n, 2))
        Jx = np.empty((n, 2, 3)) if jacobian else None
        Jt = np.empty((n, 2, 7)) if jacobian else None
        intr = p["intr"].values
        for i, idx in enumerate(self.by_camera):
            if len(idx) == 0:
                continue
            try:
                cam = CameraIntrinsics.from_params(self.models[i], intr[i])
                pix, jx, jt = project_with_jacobians(cam, Z[idx], jacobians=jacobian)
            except (NumericalDomain, ValueError):
                if jacobian:
                    raise
                return np.full((n, 2), np.inf), None
            r[idx] = pix - o.pixel[idx]
            if jacobian:
                Jx[idx] = jx
                Jt[idx] = jt
        if not jacobian:
            return r, None
        jb = JacobianBuilder(n, 2, p)
        jb.add("cam_rot", o.camera, Jx @ (-hat(RiY)))
        jb.add("cam_t", o.camera, Jx)
        jb.add("intr", o.camera, Jt)
        JxRi = Jx @ Ri
        jb.add("rig_rot", o.frameset, JxRi @ (-hat(RjX)))
        jb.add("rig_t", o.frameset, JxRi)
        if self.optimize_points:
            jb.add("points", o.point, JxRi @ Rj)
        return r, jb.build()

    def extrinsics(self):
        p = self.params
        return [RigidPose(Rotation(q), t) for q, t in zip(p["cam_rot"].values, p["cam_t"].values)]

    def rig_poses(self):
        p = self.params
        return [RigidPose(Rotation(q), t) for q, t in zip(p["rig_rot"].values, p["rig_t"].values)]

    def intrinsics(self):
        return [CameraIntrinsics.from_params(m, v) for m, v in zip(self.models, self.params["intr"].values)]


@dataclass
class FullBAResult:
    extrinsics: list
    rig_poses: list
    intrinsics: list
    points: np.ndarray
    report: object


def valid_depth_mask(extrinsics, rig_poses, intrinsics, obs, points):
    """Observations whose point lies in the projectable domain of its camera."""
    prob = FullBundleProblem(extrinsics, rig_poses, intrinsics, obs, points)
    *_, Z = prob.camera_frame_points()
    ok = np.ones(len(obs), bool)
    for i, idx in enumerate(prob.by_camera):
        if prob.models[i] is CameraModel.RADTAN:
            ok[idx] = Z[idx, 2] > 1e-9
        else:
            ok[idx] = np.linalg.norm(Z[idx], axis=1) > 1e-9
    return ok


def reprojection_residuals(extrinsics, rig_poses, intrinsics, obs, points):
    prob = FullBundleProblem(extrinsics, rig_poses, intrinsics, obs, points)
    r, _ = prob.evaluate(jacobian=False)
    return r


def full_cost(extrinsics, rig_poses, intrinsics, obs, points, loss=None):
    r = reprojection_residuals(extrinsics, rig_poses, intrinsics, obs, points)
    return robust_cost(r, CauchyLoss() if loss is None else loss)


def full_bundle_adjust(
    extrinsics,
    rig_poses,
    intrinsics,
    obs,
    points,
    reference=0,
    optimize_points=False,
    loss=None,
    config=None,
):
    """Refine extrinsics, rig poses and intrinsics (and optionally points).

    ``rig_poses[reference]`` is held fixed.  When points are optimized the
    most observed point is held fixed too, which pins the map scale; points
    are eliminated with a Schur complement in every step.
    """
    fixed = ()
    if optimize_points:
        counts = np.bincount(obs.point, minlength=len(points))
        fixed = (int(np.argmax(counts)),)
    prob = FullBundleProblem(extrinsics, rig_poses, intrinsics, obs, points, reference, optimize_points, fixed)
    report = lm_minimize(prob, loss, config)
    return FullBAResult(prob.extrinsics(), prob.rig_poses(), prob.intrinsics(), prob.points().copy(), report)
