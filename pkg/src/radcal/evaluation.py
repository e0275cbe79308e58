"""Accuracy metrics for calibrated rigs and held-out reprojection checks."""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np

from .config import CalibrationConfig
from .errors import DegenerateConfiguration, EmptyRegistration, InsufficientData, NotEnoughInliers
from .geometry import radial_from_full, rotation_angle
from .optim import FullBundleProblem, Observations, lm_minimize
from .pipeline import _image_seed, register_image
from .solvers import align_rigid, axes_conditioning, solve_rig_pose


class Regime(str, enum.Enum):
    INDOOR = "indoor"
    OUTDOOR = "outdoor"


class Verdict(str, enum.Enum):
    GOOD = "Good"
    POOR = "Poor"


# Center-error limits in centimetres; rotation limit in degrees.
CENTER_LIMIT_CM = {Regime.INDOOR: 1.0, Regime.OUTDOOR: 2.0}
ROTATION_LIMIT_DEG = 1.0


@dataclass
class RigErrorReport:
    rotation_errors_deg: list
    center_errors_cm: list
    alignment: object = None
    holdout_rms: float | None = None
    notes: list = field(default_factory=list)

    @property
    def max_rotation_deg(self):
        return max(self.rotation_errors_deg)

    @property
    def mean_rotation_deg(self):
        return float(np.mean(self.rotation_errors_deg))

    @property
    def max_center_cm(self):
        return max(self.center_errors_cm)

    @property
    def mean_center_cm(self):
        return float(np.mean(self.center_errors_cm))

    def as_dict(self):
        return {
            "rotation_errors_deg": list(self.rotation_errors_deg),
            "center_errors_cm": list(self.center_errors_cm),
            "mean_rotation_deg": self.mean_rotation_deg,
            "max_rotation_deg": self.max_rotation_deg,
            "mean_center_cm": self.mean_center_cm,
            "max_center_cm": self.max_center_cm,
            "holdout_rms_px": self.holdout_rms,
            "notes": list(self.notes),
        }

    def format(self):
        lines = ["camera  rotation[deg]  center[cm]"]
        for i, (r, c) in enumerate(zip(self.rotation_errors_deg, self.center_errors_cm)):
            lines.append(f"{i:6d}  {r:13.6f}  {c:10.6f}")
        lines.append(f"mean    {self.mean_rotation_deg:13.6f}  {self.mean_center_cm:10.6f}")
        lines.append(f"max     {self.max_rotation_deg:13.6f}  {self.max_center_cm:10.6f}")
        if self.holdout_rms is not None:
            lines.append(f"holdout reprojection RMS: {self.holdout_rms:.6f} px")
        return "\n".join(lines)


def _cauchy_weights(residuals):
    scale = 1.4826 * float(np.median(residuals))
    if scale <= 0:
        return np.ones_like(residuals)
    return 1.0 / (1.0 + (residuals / scale) ** 2)


def compare_rigs(estimated, reference, map_scale=1.0):
    """Per-camera rotation (degrees) and center (cm) errors after rigid alignment.

    ``estimated`` and ``reference`` are sequences of rig -> camera RigidPoses
    (or CalibrationResults).  Centers are aligned by least squares, then once
    more with Cauchy weights so a single bad camera cannot drag the rest.
    """
    est = getattr(estimated, "extrinsics", estimated)
    ref = getattr(reference, "extrinsics", reference)
    if len(est) != len(ref):
        raise ValueError(f"camera counts differ: {len(est)} vs {len(ref)}")
    Ce = np.array([p.center() for p in est])
    Cr = np.array([p.center() for p in ref])
    G = align_rigid(Ce, Cr)
    resid = np.linalg.norm(G.apply(Ce) - Cr, axis=1)
    G = align_rigid(Ce, Cr, weights=_cauchy_weights(resid))
    center_cm = np.linalg.norm(G.apply(Ce) - Cr, axis=1) * map_scale * 100.0
    GR = G.R
    rot = [float(np.degrees(rotation_angle(pr.R @ (pe.R @ GR.T).T))) for pe, pr in zip(est, ref)]
    return RigErrorReport(rot, [float(c) for c in center_cm], G, notes=["centers aligned with one Cauchy-reweighted pass"])


def classify_calibration(report, regime=Regime.INDOOR):
    """Good iff max rotation error < 1 degree and max center error < 1 cm (indoor) / 2 cm (outdoor)."""
    regime = Regime(regime)
    ok = report.max_rotation_deg < ROTATION_LIMIT_DEG and report.max_center_cm < CENTER_LIMIT_CM[regime]
    return Verdict.GOOD if ok else Verdict.POOR


@dataclass
class HoldoutValidation:
    rms: float
    inlier_ratio: float
    framesets_registered: int
    observations: int


def validate_holdout(result, holdout, config=None, threshold=2.0, min_inlier_ratio=0.5):
    """Refit only the rig poses on ``holdout`` and measure reprojection error.

    Each holdout image is registered with the radial solver around the
    calibrated principal point, rig poses are solved from the calibrated
    extrinsics and refined with all camera parameters frozen.  The RMS is per
    coordinate over residuals within ``threshold`` pixels; when fewer than
    ``min_inlier_ratio`` of the registered correspondences are that close the
    RMS covers all of them, so a mismatched rig cannot report a small number.
    """
    config = CalibrationConfig() if config is None else config
    if holdout.camera_count != result.camera_count:
        raise ValueError(f"camera counts differ: {holdout.camera_count} vs {result.camera_count}")
    radial = [radial_from_full(p) for p in result.extrinsics]
    poses, cams, fss, pts, pix = [], [], [], [], []
    for k, fs in enumerate(holdout.framesets):
        regs = []
        for i in sorted(fs.observations):
            img = fs.observations[i]
            if len(img) < 5:
                continue
            rows = holdout.point_rows(img.point_ids)
            v = img.pixels - result.intrinsics[i].principal_point
            try:
                pose, mask, _ = register_image(v, holdout.points[rows], config, _image_seed(config.seed, 7, i, k))
            except (NotEnoughInliers, InsufficientData, DegenerateConfiguration):
                continue
            regs.append((i, pose, rows[mask], img.pixels[mask]))
        if len(regs) < 2 or axes_conditioning([radial[i] for i, *_ in regs]) <= config.axes_conditioning:
            continue
        try:
            Q = solve_rig_pose([(radial[i], pose) for i, pose, *_ in regs], conditioning=config.axes_conditioning)
        except DegenerateConfiguration:
            continue
        n = len(poses)
        poses.append(Q)
        for i, _, rows, px in regs:
            cams.append(np.full(len(rows), i))
            fss.append(np.full(len(rows), n))
            pts.append(rows)
            pix.append(px)
    if not poses:
        raise EmptyRegistration("no holdout frameset could be registered")
    obs = Observations(np.concatenate(cams), np.concatenate(fss), np.concatenate(pts), np.vstack(pix))
    prob = FullBundleProblem(
        result.extrinsics, poses, result.intrinsics, obs, holdout.points, reference=None, fix_cameras=True
    )
    Z = prob.camera_frame_points()[-1]
    keep = Z[:, 2] > 1e-9
    if not np.all(keep):
        obs = obs.subset(keep)
        prob = FullBundleProblem(
            result.extrinsics, poses, result.intrinsics, obs, holdout.points, reference=None, fix_cameras=True
        )
    lm_minimize(prob, config=config.lm)
    r, _ = prob.evaluate(jacobian=False)
    norms = np.linalg.norm(r, axis=1)
    inl = norms <= threshold
    ratio = float(np.mean(inl))
    used = r[inl] if ratio >= min_inlier_ratio else r
    rms = float(np.sqrt(np.mean(used**2)))
    return HoldoutValidation(rms, ratio, len(poses), len(obs))


def validate_reprojection(result, holdout, config=None):
    """Holdout reprojection RMS in pixels; see :func:`validate_holdout`."""
    return validate_holdout(result, holdout, config).rms
