"""Five-stage rig calibration: radial poses first, intrinsics later.

1. Independent 1D radial pose per image (P5P radial solver in RANSAC).
2. Greedy, RANSAC-style rig averaging to initialize radial extrinsics and
   rig poses, polished on the pose graph.
3. Radial bundle adjustment, including principal points.
4. Per-camera upgrade: forward translation, focal length and distortion.
5. Full bundle adjustment on the reprojection error.

Framesets are addressed by their position in ``session.framesets`` inside
the pipeline and by ``frameset_id`` in the returned result.
"""

from __future__ import annotations

import dataclasses
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .camera import CameraIntrinsics, CameraModel, fit_model_to_division
from .config import CalibrationConfig
from .errors import (
    AllTrialsFailed,
    DegenerateConfiguration,
    EmptyRegistration,
    InsufficientData,
    NoValidSolution,
    NotEnoughInliers,
    ParallelAxesDegenerate,
    RadcalError,
    UnconnectedRig,
)
from .geometry import RigidPose, radial_distance, radial_from_full
from .optim import (
    Observations,
    full_bundle_adjust,
    full_cost,
    optimize_pose_graph,
    pose_graph_cost,
    radial_bundle_adjust,
    radial_cost,
    refine_upgrade,
    reprojection_residuals,
    valid_depth_mask,
)
from .robust import RansacConfig, cauchy_cost, make_rng, ransac
from .session import CalibrationResult
from .solvers import axes_conditioning, fit_radial_pose_linear, solve_p5p_radial, solve_rig_pose, solve_upgrade_linear

STAGE_NAMES = {
    1: "radial pose estimation",
    2: "rig initialization",
    3: "radial bundle adjustment",
    4: "upgrade",
    5: "full bundle adjustment",
}


@dataclass
class Registration:
    """Stage-1 result for one image."""

    pose: object
    inlier_mask: np.ndarray
    point_rows: np.ndarray
    pixels: np.ndarray
    rms: float

    @property
    def num_inliers(self):
        return int(np.count_nonzero(self.inlier_mask))


@dataclass
class RegistrationSet:
    """Omega: registered images keyed by (camera, frameset position)."""

    camera_count: int
    frameset_count: int
    entries: dict
    skipped: dict = field(default_factory=dict)

    def cameras_of(self, k):
        return [i for i in range(self.camera_count) if (i, k) in self.entries]

    def __len__(self):
        return len(self.entries)


@dataclass
class RigInitialization:
    """Radial extrinsics per camera and rig poses for the assigned framesets."""

    extrinsics: list
    rig_poses: dict
    reference: int
    score: float
    inlier_ratio: float
    diagnostics: dict = field(default_factory=dict)


# ---------------------------------------------------------------------------
# Stage 1
# ---------------------------------------------------------------------------


def _radial_errors(pose, X, v):
    """Distance of ``v`` to the projected half-line; wrong-side points get ``|v|``."""
    u = pose.apply(X)
    with np.errstate(divide="ignore", invalid="ignore"):
        d = np.abs(radial_distance(u, v))
    wrong = (np.sum(u * v, axis=1) <= 0) | ~np.isfinite(d)
    return np.where(wrong, np.linalg.norm(v, axis=1), d)


def register_image(v, X, config, seed):
    """RANSAC over the P5P radial solver for one image; returns (pose, mask, rms)."""
    rc = RansacConfig(
        threshold=config.stage1_threshold,
        confidence=config.stage1_confidence,
        max_iterations=config.stage1_max_iterations,
        min_iterations=config.stage1_min_iterations,
        min_inliers=config.stage1_min_inliers,
        seed=seed,
    )
    res = ransac(
        len(v),
        5,
        solver=lambda idx: solve_p5p_radial((v[idx], X[idx])),
        scorer=lambda pose: _radial_errors(pose, X, v),
        config=rc,
        refit=lambda pose, mask: fit_radial_pose_linear(v[mask], X[mask]),
    )
    return res.model, res.inlier_mask, res.inlier_rms


def _image_seed(seed, *keys):
    return int(make_rng(seed, *keys).integers(0, 2**63 - 1))


def _map_ordered(func, items, workers):
    if workers <= 1:
        return [func(x) for x in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(func, items))


def stage1_estimate_radial_poses(session, config=None):
    """Independent radial pose per image, pixels centered at the image center."""
    config = CalibrationConfig() if config is None else config
    jobs = []
    skipped = {}
    for k, fs in enumerate(session.framesets):
        for i in sorted(fs.observations):
            img = fs.observations[i]
            if len(img) < 5:
                skipped[(i, k)] = f"{len(img)} correspondences"
                continue
            jobs.append((i, k, img))

    def run(job):
        i, k, img = job
        rows = session.point_rows(img.point_ids)
        v = img.pixels - session.image_center(i)
        try:
            pose, mask, rms = register_image(v, session.points[rows], config, _image_seed(config.seed, 1, i, k))
        except (NotEnoughInliers, InsufficientData, DegenerateConfiguration) as exc:
            return i, k, None, str(exc)
        return i, k, Registration(pose, mask, rows, img.pixels, rms), None

    entries = {}
    for i, k, reg, msg in _map_ordered(run, jobs, config.workers):
        if reg is None:
            skipped[(i, k)] = msg
        else:
            entries[(i, k)] = reg
    if not entries:
        raise EmptyRegistration("no image could be registered")
    return RegistrationSet(session.camera_count, len(session.framesets), entries, skipped)


# ---------------------------------------------------------------------------
# Stage 2
# ---------------------------------------------------------------------------


def check_connectivity(registration):
    """Raise UnconnectedRig unless all cameras share one component of Omega."""
    n = registration.camera_count
    parent = list(range(n + registration.frameset_count))

    def find(a):
        while parent[a] != a:
            parent[a] = parent[parent[a]]
            a = parent[a]
        return a

    for i, k in registration.entries:
        parent[find(i)] = find(n + k)
    missing = [i for i in range(n) if not any((i, k) in registration.entries for k in range(registration.frameset_count))]
    if missing:
        raise UnconnectedRig(f"camera(s) {missing} have no registered image")
    roots = {find(i) for i in range(n)}
    if len(roots) > 1:
        groups = {}
        for i in range(n):
            groups.setdefault(find(i), []).append(i)
        raise UnconnectedRig(f"registration graph splits the rig into {sorted(groups.values())}")


def _conditioned(poses, threshold):
    return len(poses) >= 2 and axes_conditioning(poses) > threshold


def _greedy_assign(registration, k0, threshold):
    """Greedy back-and-forth assignment seeded at frameset ``k0``."""
    reg = registration.entries
    P = {i: reg[(i, k0)].pose for i in registration.cameras_of(k0)}
    Q = {k0: RigidPose.identity()}
    progress = True
    while progress:
        progress = False
        for k in range(registration.frameset_count):
            if k in Q:
                continue
            cams = [i for i in registration.cameras_of(k) if i in P]
            if not _conditioned([P[i] for i in cams], threshold):
                continue
            try:
                Q[k] = solve_rig_pose([(P[i], reg[(i, k)].pose) for i in cams], conditioning=threshold)
            except DegenerateConfiguration:
                continue
            progress = True
        for i in range(registration.camera_count):
            if i in P:
                continue
            options = [k for k in sorted(Q) if (i, k) in reg]
            if not options:
                continue
            best = max(options, key=lambda k: (reg[(i, k)].num_inliers, -k))
            P[i] = reg[(i, best)].pose.compose(Q[best].inverse())
            progress = True
    return P, Q


def _score_assignment(registration, session, P, Q, threshold):
    """Robust radial cost and inlier ratio over all stage-1 inliers.

    Images left unassigned count every correspondence as an outlier paying
    the cost of a residual at the threshold.
    """
    penalty = float(cauchy_cost(threshold**2))
    cost, inliers, total = 0.0, 0, 0
    for (i, k), r in registration.entries.items():
        n = r.num_inliers
        total += n
        if i not in P or k not in Q:
            cost += n * penalty
            continue
        X = session.points[r.point_rows[r.inlier_mask]]
        v = r.pixels[r.inlier_mask] - session.image_center(i)
        d = _radial_errors(P[i].compose(Q[k]), X, v)
        cost += float(np.sum(cauchy_cost(np.minimum(d, threshold) ** 2)))
        inliers += int(np.count_nonzero(d <= threshold))
    return cost, inliers / max(total, 1)


def _seed_candidates(registration, threshold):
    reg = registration.entries
    multi, good = [], []
    for k in range(registration.frameset_count):
        cams = registration.cameras_of(k)
        if len(cams) < 2:
            continue
        multi.append(k)
        if _conditioned([reg[(i, k)].pose for i in cams], threshold):
            good.append(k)
    if not multi:
        raise AllTrialsFailed("no frameset has two or more registered cameras")
    if not good:
        raise ParallelAxesDegenerate(
            "every frameset with two or more cameras has (near) parallel principal axes; "
            "the rig needs at least two cameras with non-parallel axes"
        )
    return good


def _measurements(registration, Q):
    index = {k: n for n, k in enumerate(sorted(Q))}
    return [(i, index[k], r.pose) for (i, k), r in sorted(registration.entries.items()) if k in Q]


def _polish(registration, P, Q, k0, config):
    order = sorted(Q)
    extr = [P[i] for i in range(registration.camera_count)]
    poses = [Q[k] for k in order]
    meas = _measurements(registration, Q)
    before = pose_graph_cost(extr, poses, meas, config.pose_graph_weight)
    res = optimize_pose_graph(extr, poses, meas, config.pose_graph_weight, order.index(k0), config=config.lm)
    return res.extrinsics, dict(zip(order, res.rig_poses)), {"cost_before": before, **res.report.as_dict()}


def _check_rig_axes(extrinsics, threshold):
    cond = axes_conditioning(extrinsics)
    if cond <= threshold:
        raise ParallelAxesDegenerate(
            f"rig principal axes are (near) parallel: sigma ratio {cond:.3g} <= {threshold:.3g}; "
            "the rig needs at least two cameras with non-parallel axes"
        )


def regauge_radial(extrinsics, rig_poses, camera=0):
    """Re-express so that camera ``camera`` has the radial pose ``[I | 0]``."""
    G = extrinsics[camera].extend(0.0)
    Ginv = G.inverse()
    return [p.compose(Ginv) for p in extrinsics], {k: G.compose(q) for k, q in rig_poses.items()}


def regauge_full(extrinsics, rig_poses, camera=0):
    """Re-express so that camera ``camera`` has the identity extrinsic."""
    G = extrinsics[camera]
    Ginv = G.inverse()
    extr = [p.compose(Ginv) for p in extrinsics]
    extr[camera] = RigidPose.identity()
    return extr, {k: G.compose(q) for k, q in rig_poses.items()}


def stage2_initialize_rig(registration, session, config=None):
    """Greedy RANSAC-style rig averaging followed by pose-graph polish."""
    config = CalibrationConfig() if config is None else config
    check_connectivity(registration)
    thr = config.axes_conditioning
    candidates = _seed_candidates(registration, thr)
    rng = make_rng(config.seed, 2)
    n_cam = registration.camera_count
    best = None
    trials = 0
    for _ in range(config.stage2_trials):
        trials += 1
        k0 = int(candidates[rng.integers(len(candidates))])
        P, Q = _greedy_assign(registration, k0, thr)
        if len(P) < n_cam:
            continue
        cost, ratio = _score_assignment(registration, session, P, Q, config.stage1_threshold)
        if best is None or cost < best[0]:
            best = (cost, ratio, k0, P, Q)
        if ratio > config.stage2_early_exit_ratio:
            break
    if best is None:
        raise AllTrialsFailed(f"no trial out of {trials} assigned every camera")
    cost, ratio, k0, P, Q = best
    extr, poses, polish = _polish(registration, P, Q, k0, config)
    _check_rig_axes(extr, thr)
    extr, poses = regauge_radial(extr, poses)
    dropped = [session.framesets[k].frameset_id for k in range(registration.frameset_count) if k not in poses]
    diag = {
        "trials": trials,
        "seed_frameset": session.framesets[k0].frameset_id,
        "score": cost,
        "inlier_ratio": ratio,
        "assigned_framesets": len(poses),
        "dropped_framesets": dropped,
        "pose_graph": polish,
    }
    return RigInitialization(extr, poses, k0, cost, ratio, diag)


def initialize_single_frameset(registration, session, config=None):
    """Baseline initialization that needs one frameset registering every camera.

    Extrinsics are read off that frameset; all other rig poses are solved
    from them.  Raises AllTrialsFailed when no frameset is complete.
    """
    config = CalibrationConfig() if config is None else config
    n_cam = registration.camera_count
    complete = [k for k in range(registration.frameset_count) if len(registration.cameras_of(k)) == n_cam]
    if not complete:
        raise AllTrialsFailed("no frameset registers every camera")
    reg = registration.entries
    k0 = max(complete, key=lambda k: (sum(reg[(i, k)].num_inliers for i in range(n_cam)), -k))
    P = {i: reg[(i, k0)].pose for i in range(n_cam)}
    Q = {k0: RigidPose.identity()}
    for k in range(registration.frameset_count):
        cams = registration.cameras_of(k)
        if k == k0 or not _conditioned([P[i] for i in cams], config.axes_conditioning):
            continue
        Q[k] = solve_rig_pose([(P[i], reg[(i, k)].pose) for i in cams], conditioning=config.axes_conditioning)
    cost, ratio = _score_assignment(registration, session, P, Q, config.stage1_threshold)
    extr, poses, polish = _polish(registration, P, Q, k0, config)
    extr, poses = regauge_radial(extr, poses)
    return RigInitialization(extr, poses, k0, cost, ratio, {"seed_frameset": session.framesets[k0].frameset_id})


# ---------------------------------------------------------------------------
# Stage 3
# ---------------------------------------------------------------------------


def inlier_observations(registration, frameset_index):
    """Flat table of stage-1 inliers for framesets with a rig pose.

    ``frameset_index`` maps frameset positions to rig-pose indices.
    """
    cams, fss, pts, pix = [], [], [], []
    for (i, k), r in sorted(registration.entries.items()):
        if k not in frameset_index:
            continue
        m = r.inlier_mask
        cams.append(np.full(np.count_nonzero(m), i))
        fss.append(np.full(np.count_nonzero(m), frameset_index[k]))
        pts.append(r.point_rows[m])
        pix.append(r.pixels[m])
    if not cams:
        raise EmptyRegistration("no registered image belongs to an assigned frameset")
    return Observations(np.concatenate(cams), np.concatenate(fss), np.concatenate(pts), np.vstack(pix))


@dataclass
class RadialRig:
    extrinsics: list
    rig_poses: dict
    principal_points: np.ndarray
    reference: int
    diagnostics: dict = field(default_factory=dict)


def stage3_radial_refine(init, registration, session, config=None):
    """Radial bundle adjustment with the reference rig pose held fixed."""
    config = CalibrationConfig() if config is None else config
    order = sorted(init.rig_poses)
    index = {k: n for n, k in enumerate(order)}
    obs = inlier_observations(registration, index)
    poses = [init.rig_poses[k] for k in order]
    pp0 = np.array([session.image_center(i) for i in range(session.camera_count)])
    before = radial_cost(init.extrinsics, poses, pp0, obs, session.points)
    res = radial_bundle_adjust(
        init.extrinsics,
        poses,
        pp0,
        obs,
        session.points,
        reference=index[init.reference],
        min_pp_observations=config.min_pp_observations,
        config=config.lm,
    )
    _check_rig_axes(res.extrinsics, config.axes_conditioning)
    extr, rig = regauge_radial(res.extrinsics, dict(zip(order, res.rig_poses)))
    diag = {
        "cost_before": before,
        **res.report.as_dict(),
        "observations": len(obs),
        "principal_point_shift": np.linalg.norm(res.principal_points - pp0, axis=1).tolist(),
    }
    return RadialRig(extr, rig, res.principal_points, init.reference, diag)


# ---------------------------------------------------------------------------
# Stage 4
# ---------------------------------------------------------------------------


@dataclass
class CameraUpgrade:
    camera: int
    intrinsics: CameraIntrinsics
    t_z: float
    inlier_ratio: float
    diagnostics: dict = field(default_factory=dict)


def _corner_radius(session, i, pp):
    w, h = session.image_sizes[i]
    corners = np.array([[0, 0], [w, 0], [0, h], [w, h]], float)
    return float(np.max(np.linalg.norm(corners - pp, axis=1)))


def upgrade_camera(i, Z, pixels, principal_point, model, max_radius, config, seed):
    """Forward translation and intrinsics of one camera from camera-frame points."""
    v = pixels - principal_point
    r_obs = float(np.max(np.linalg.norm(v, axis=1)))
    n_dist = config.upgrade_n_dist
    rc = RansacConfig(
        threshold=config.upgrade_threshold,
        confidence=config.upgrade_confidence,
        max_iterations=config.upgrade_max_iterations,
        min_inliers=config.upgrade_min_inliers,
        seed=seed,
    )
    res = ransac(
        len(v),
        n_dist + 2,
        solver=lambda idx: solve_upgrade_linear(v[idx], Z[idx], n_dist, max_radius=r_obs),
        scorer=lambda sol: np.abs(sol.radial_errors(v, Z)),
        config=rc,
        refit=lambda sol, mask: solve_upgrade_linear(v[mask], Z[mask], n_dist, max_radius=r_obs)[0],
    )
    ratio = res.num_inliers / len(v)
    if ratio < config.upgrade_min_inlier_ratio:
        raise NoValidSolution(
            f"camera {i}: only {100 * ratio:.1f}% upgrade inliers (need {100 * config.upgrade_min_inlier_ratio:.0f}%)"
        )
    sol = res.model
    dist = fit_model_to_division(model, sol.focal, sol.division, r_obs)
    cam = CameraIntrinsics(model, sol.focal, principal_point, dist)
    mask = res.inlier_mask
    t_z = sol.t_z
    rounds = []
    for _ in range(2):
        ref = refine_upgrade(cam, t_z, Z[mask], pixels[mask], max_radius=max_radius, config=config.lm)
        cam, t_z = ref.camera, ref.t_z
        rounds.append({"inliers": int(np.count_nonzero(mask)), "rms_before": ref.rms_before, "rms_after": ref.rms_after})
        Zt = Z + np.array([0.0, 0.0, t_z])
        ok = Zt[:, 2] > 1e-9 if model is CameraModel.RADTAN else np.linalg.norm(Zt, axis=1) > 1e-9
        err = np.full(len(Z), np.inf)
        err[ok] = np.linalg.norm(cam.project(Zt[ok]) - pixels[ok], axis=1)
        new_mask = err <= config.upgrade_threshold
        if np.array_equal(new_mask, mask) or np.count_nonzero(new_mask) < config.upgrade_min_inliers:
            break
        mask = new_mask
    diag = {
        "focal_linear": sol.focal,
        "t_z_linear": sol.t_z,
        "division": list(sol.division.mu),
        "ransac_iterations": res.iterations_used,
        "inlier_ratio": ratio,
        "refinement": rounds,
    }
    return CameraUpgrade(i, cam, t_z, ratio, diag)


def stage4_upgrade_cameras(rig, registration, session, config=None):
    """Upgrade every camera independently; fails if any camera has no solution.

    Returns ``(rig, upgrades)``: the radial rig is re-gauged along camera 0's
    axis so that camera 0 ends up with zero forward translation, and the
    upgrades are expressed in that gauge.
    """
    config = CalibrationConfig() if config is None else config
    model = CameraModel.parse(config.camera_model)
    order = sorted(rig.rig_poses)
    index = {k: n for n, k in enumerate(order)}
    obs = inlier_observations(registration, index)
    poses = [rig.rig_poses[k] for k in order]

    def run(i):
        sel = obs.camera == i
        P = rig.extrinsics[i].extend(0.0)
        fs = obs.frameset[sel]
        X = session.points[obs.point[sel]]
        Z = np.empty_like(X)
        for n in np.unique(fs):
            m = fs == n
            Z[m] = P.compose(poses[n]).apply(X[m])
        pp = rig.principal_points[i]
        try:
            return upgrade_camera(
                i, Z, obs.pixel[sel], pp, model, _corner_radius(session, i, pp), config, _image_seed(config.seed, 4, i)
            )
        except (NoValidSolution, DegenerateConfiguration, InsufficientData) as exc:
            return exc

    results = _map_ordered(run, range(session.camera_count), config.workers)
    failures = {i: str(r) for i, r in enumerate(results) if isinstance(r, Exception)}
    if failures:
        err = NoValidSolution(
            "; ".join(f"camera {i}: {msg}" for i, msg in failures.items()) or "upgrade failed"
        )
        err.failures = failures
        raise err
    return zero_forward_translation(rig, results)


def zero_forward_translation(rig, upgrades, camera=0):
    """Shift the rig frame along ``camera``'s axis so its forward translation is 0."""
    full = [rig.extrinsics[u.camera].extend(u.t_z) for u in upgrades]
    extr, poses = regauge_full(full, rig.rig_poses, camera)
    radial = [radial_from_full(p) for p in extr]
    moved = [dataclasses.replace(u, t_z=float(p.translation[2])) for u, p in zip(upgrades, extr)]
    return dataclasses.replace(rig, extrinsics=radial, rig_poses=poses), moved


# ---------------------------------------------------------------------------
# Stage 5 and the full pipeline
# ---------------------------------------------------------------------------


def _reprojection_rms(residuals, threshold):
    norms = np.linalg.norm(residuals, axis=1)
    inl = norms <= threshold
    rms = float(np.sqrt(np.mean(residuals[inl] ** 2))) if np.any(inl) else float("inf")
    return rms, float(np.mean(inl)) if len(inl) else 0.0


def stage5_full_refine(rig, upgrades, registration, session, config=None):
    """Full bundle adjustment; returns (extrinsics, rig poses, intrinsics, points, diagnostics)."""
    config = CalibrationConfig() if config is None else config
    order = sorted(rig.rig_poses)
    index = {k: n for n, k in enumerate(order)}
    obs = inlier_observations(registration, index)
    extr = [rig.extrinsics[u.camera].extend(u.t_z) for u in upgrades]
    intr = [u.intrinsics for u in upgrades]
    poses = [rig.rig_poses[k] for k in order]
    ok = valid_depth_mask(extr, poses, intr, obs, session.points)
    obs = obs.subset(ok)
    before = full_cost(extr, poses, intr, obs, session.points)
    res = full_bundle_adjust(
        extr,
        poses,
        intr,
        obs,
        session.points,
        reference=index[rig.reference],
        optimize_points=config.optimize_points,
        config=config.lm,
    )
    r = reprojection_residuals(res.extrinsics, res.rig_poses, res.intrinsics, obs, res.points)
    rms, ratio = _reprojection_rms(r, config.upgrade_threshold)
    extr, rig_poses = regauge_full(res.extrinsics, dict(zip(order, res.rig_poses)))
    diag = {
        "cost_before": before,
        **res.report.as_dict(),
        "observations": len(obs),
        "dropped_behind_camera": int(np.count_nonzero(~ok)),
        "reprojection_rms": rms,
        "inlier_ratio": ratio,
    }
    return extr, rig_poses, res.intrinsics, res.points, diag


def _label(exc, stage):
    exc.stage = stage
    if exc.args and not str(exc.args[0]).startswith("stage "):
        exc.args = (f"stage {stage} ({STAGE_NAMES[stage]}): {exc.args[0]}", *exc.args[1:])
    return exc


def calibrate(session, config=None, initializer=None, registration=None):
    """Run all five stages and return a :class:`CalibrationResult`.

    ``initializer`` replaces the stage-2 rig initialization, e.g.
    :func:`initialize_single_frameset`; a precomputed stage-1
    ``registration`` of the same session skips stage 1.  Errors keep their
    type and gain a ``stage`` attribute plus a stage label in the message.
    """
    config = CalibrationConfig() if config is None else config
    initializer = stage2_initialize_rig if initializer is None else initializer
    session.validate()
    timings = {}
    diag = {}
    stage = 1
    try:
        t = time.perf_counter()
        if registration is None:
            registration = stage1_estimate_radial_poses(session, config)
        timings["stage1"] = time.perf_counter() - t
        images = sum(len(fs.observations) for fs in session.framesets)
        ratios = [r.num_inliers / len(r.inlier_mask) for r in registration.entries.values()]
        diag["stage1"] = {
            "images": images,
            "registered": len(registration),
            "skipped": len(registration.skipped),
            "mean_inlier_ratio": float(np.mean(ratios)),
        }

        stage = 2
        t = time.perf_counter()
        init = initializer(registration, session, config)
        timings["stage2"] = time.perf_counter() - t
        diag["stage2"] = init.diagnostics
        diag["stage2"]["radial_cost"] = _radial_stage_cost(init.extrinsics, init.rig_poses, registration, session)

        stage = 3
        t = time.perf_counter()
        rig = stage3_radial_refine(init, registration, session, config)
        timings["stage3"] = time.perf_counter() - t
        diag["stage3"] = rig.diagnostics

        stage = 4
        t = time.perf_counter()
        rig, upgrades = stage4_upgrade_cameras(rig, registration, session, config)
        timings["stage4"] = time.perf_counter() - t
        diag["stage4"] = [
            {"camera": u.camera, "focal": u.intrinsics.focal, "t_z": u.t_z, **u.diagnostics} for u in upgrades
        ]

        stage = 5
        t = time.perf_counter()
        extr, rig_poses, intr, _, diag5 = stage5_full_refine(rig, upgrades, registration, session, config)
        timings["stage5"] = time.perf_counter() - t
        diag["stage5"] = diag5
    except RadcalError as exc:
        raise _label(exc, stage) from None
    diag["final_reprojection_rms"] = diag5["reprojection_rms"]
    diag["defaults_used"] = config.defaults_used()
    poses = {session.framesets[k].frameset_id: q for k, q in sorted(rig_poses.items())}
    # The worker count does not change results, so it stays out of the record.
    record = {k: v for k, v in config.to_dict().items() if k != "workers"}
    return CalibrationResult(intr, extr, poses, diag, record, timings)


def _radial_stage_cost(extrinsics, rig_poses, registration, session):
    order = sorted(rig_poses)
    index = {k: n for n, k in enumerate(order)}
    obs = inlier_observations(registration, index)
    pp = np.array([session.image_center(i) for i in range(session.camera_count)])
    return radial_cost(extrinsics, [rig_poses[k] for k in order], pp, obs, session.points)
