import dataclasses

import numpy as np
import pytest

from radcal.config import CalibrationConfig
from radcal.errors import (
    AllTrialsFailed,
    EmptyRegistration,
    NoValidSolution,
    ParallelAxesDegenerate,
    UnconnectedRig,
)
from radcal.evaluation import compare_rigs
from radcal.geometry import radial_from_full, rotation_angle
from radcal.optim import full_cost
from radcal.pipeline import (
    RegistrationSet,
    calibrate,
    check_connectivity,
    initialize_single_frameset,
    inlier_observations,
    regauge_full,
    stage1_estimate_radial_poses,
    stage2_initialize_rig,
    stage3_radial_refine,
    stage4_upgrade_cameras,
)
from radcal.session import CalibrationSession, Frameset, ImageObservations, check_result
from radcal.synth import NoiseSpec, Preset, RigPreset, generate_session, parallel_pair_preset, pentagonal_preset


def centered_radial_rig():
    """Pentagonal rig with the principal point at the image center and no tangential terms."""
    rig = pentagonal_preset()
    intr = [
        c.replace(principal_point=size / 2.0, distortion=[*c.distortion[:2], 0.0, 0.0])
        for c, size in zip(rig.intrinsics, rig.image_sizes)
    ]
    return dataclasses.replace(rig, intrinsics=intr, preset=Preset.CUSTOM)


@pytest.fixture(scope="module")
def clean():
    session, truth = generate_session(centered_radial_rig(), 8, 2500, NoiseSpec(0.0, 0.0, 0.0, 21))
    config = CalibrationConfig(stage2_trials=5)
    reg = stage1_estimate_radial_poses(session, config)
    return session, truth, config, reg


@pytest.fixture(scope="module")
def noisy_result():
    session, truth = generate_session("pentagonal", 12, 2500, NoiseSpec(0.5, 0.1, 0.0, 8))
    config = CalibrationConfig(stage2_trials=10)
    return session, truth, config, calibrate(session, config)


def with_observations(session, change):
    """Copy of ``session`` with ``change(k, i, img)`` applied to every image (None drops it)."""
    framesets = []
    for k, fs in enumerate(session.framesets):
        obs = {}
        for i, img in fs.observations.items():
            new = change(k, i, img)
            if new is not None:
                obs[i] = new
        framesets.append(Frameset(fs.frameset_id, fs.timestamp, obs))
    return CalibrationSession(
        session.point_ids, session.points, framesets, session.camera_count, session.image_sizes, session.map_scale
    )


# --- stage 1 ----------------------------------------------------------------------


def test_stage1_noise_free(clean):
    session, truth, _, reg = clean
    images = sum(len(fs.observations) for fs in session.framesets)
    assert len(reg) == images == session.camera_count * len(session.framesets)
    for (i, k), r in reg.entries.items():
        T = radial_from_full(truth.rig.extrinsics[i].compose(truth.rig_poses[session.framesets[k].frameset_id]))
        assert rotation_angle(r.pose.rotation.matrix() @ T.rotation.matrix().T) < 1e-5
        assert r.inlier_mask.all()


def test_stage1_excludes_all_outlier_image(clean):
    session, _, config, reg = clean
    rng = np.random.default_rng(0)

    def corrupt(k, i, img):
        if (k, i) == (2, 3):
            return ImageObservations(img.point_ids, rng.uniform([0, 0], [1024, 768], (len(img), 2)))
        return img

    bad = stage1_estimate_radial_poses(with_observations(session, corrupt), config)
    assert (3, 2) not in bad.entries and (3, 2) in bad.skipped
    assert set(bad.entries) == set(reg.entries) - {(3, 2)}
    for key in bad.entries:
        assert np.array_equal(bad.entries[key].pose.matrix(), reg.entries[key].pose.matrix())


def test_stage1_skips_tiny_image(clean):
    session, _, config, _ = clean
    tiny = with_observations(session, lambda k, i, img: ImageObservations(img.point_ids[:3], img.pixels[:3]) if (k, i) == (0, 0) else img)
    reg = stage1_estimate_radial_poses(tiny, config)
    assert (0, 0) in reg.skipped and (0, 0) not in reg.entries


def test_stage1_empty_registration(clean):
    session, _, config, _ = clean
    rng = np.random.default_rng(1)
    garbage = with_observations(session, lambda k, i, img: ImageObservations(img.point_ids, rng.uniform(0, 768, (len(img), 2))) if k < 2 and i < 2 else None)
    with pytest.raises(EmptyRegistration):
        stage1_estimate_radial_poses(garbage, config)


def test_stage1_independent_of_worker_count(clean):
    session, _, config, reg = clean
    par = stage1_estimate_radial_poses(session, dataclasses.replace(config, workers=4))
    assert par.entries.keys() == reg.entries.keys()
    for key in reg.entries:
        assert np.array_equal(par.entries[key].pose.matrix(), reg.entries[key].pose.matrix())


# --- stage 2 ----------------------------------------------------------------------


def _forward_shift(a, b):
    """Residual of explaining b - a by a rig-frame shift along camera 0's axis.

    The radial rig frame is only defined up to such a shift (the unknown
    forward translation of the reference camera).
    """
    dirs = np.concatenate([p.A[:, 2] for p in a.extrinsics])
    diff = np.concatenate([q.b - p.b for p, q in zip(a.extrinsics, b.extrinsics)])
    s = dirs @ diff / (dirs @ dirs)
    return s, float(np.max(np.abs(diff - s * dirs)))


def test_stage2_matches_single_frameset_initialization(clean):
    session, truth, config, reg = clean
    greedy = stage2_initialize_rig(reg, session, config)
    single = initialize_single_frameset(reg, session, config)
    for a, b in zip(greedy.extrinsics, single.extrinsics):
        assert np.max(np.abs(a.A - b.A)) < 1e-6
    s, residual = _forward_shift(greedy, single)
    assert residual < 1e-6
    assert greedy.rig_poses.keys() == single.rig_poses.keys()
    for k in greedy.rig_poses:
        qa, qb = greedy.rig_poses[k], single.rig_poses[k]
        assert np.max(np.abs(qa.R - qb.R)) < 1e-6
        assert np.max(np.abs(qa.t - [0, 0, s] - qb.t)) < 1e-6
    assert np.allclose(greedy.extrinsics[0].matrix(), [[1, 0, 0, 0], [0, 1, 0, 0]], atol=1e-12)


def test_stage2_closes_without_complete_frameset():
    session, truth = generate_session("pentagonal", 10, 2500, NoiseSpec(0.5, 0.1, 0.4, 3, "no_complete"))
    config = CalibrationConfig(stage2_trials=10)
    reg = stage1_estimate_radial_poses(session, config)
    assert all(len(reg.cameras_of(k)) < session.camera_count for k in range(len(session.framesets)))
    with pytest.raises(AllTrialsFailed):
        initialize_single_frameset(reg, session, config)
    init = stage2_initialize_rig(reg, session, config)
    assert len(init.extrinsics) == session.camera_count
    est = [p.extend(0.0) for p in init.extrinsics]
    ref = [radial_from_full(p).extend(0.0) for p in truth.rig.extrinsics]
    G = ref[0]
    for e, r in zip(est, ref):
        assert np.degrees(rotation_angle(e.R @ G.R @ r.R.T)) < 1.0


def test_stage2_unconnected_rig(clean):
    session, _, config, _ = clean
    split = with_observations(session, lambda k, i, img: img if (i < 5) == (k % 2 == 0) else None)
    reg = stage1_estimate_radial_poses(split, config)
    with pytest.raises(UnconnectedRig):
        check_connectivity(reg)
    with pytest.raises(UnconnectedRig) as info:
        calibrate(split, config, registration=reg)
    assert info.value.stage == 2
    assert str(info.value).startswith("stage 2 (")


def test_stage2_needs_two_cameras_per_frameset():
    reg = RegistrationSet(2, 2, {(0, 0): None, (1, 1): None})
    with pytest.raises(UnconnectedRig):
        stage2_initialize_rig(reg, None)


# --- stages 3 and 4 ------------------------------------------------------------------


def test_stage3_and_4_noise_free(clean):
    session, truth, config, reg = clean
    init = stage2_initialize_rig(reg, session, config)
    rig = stage3_radial_refine(init, reg, session, config)
    assert rig.diagnostics["final_cost"] <= rig.diagnostics["cost_before"]
    rig, ups = stage4_upgrade_cameras(rig, reg, session, config)
    assert np.allclose(rig.extrinsics[0].matrix(), [[1, 0, 0, 0], [0, 1, 0, 0]], atol=1e-12)
    assert abs(ups[0].t_z) < 1e-6
    for up, cam in zip(ups, truth.rig.intrinsics):
        assert up.intrinsics.focal == pytest.approx(cam.focal, rel=1e-3)
        w, h = session.image_sizes[up.camera]
        rho = np.linspace(1e-3, np.hypot(w, h) / 2 / cam.focal, 64)
        diff = cam.focal * cam.radial_profile(rho) - up.intrinsics.focal * up.intrinsics.radial_profile(rho)
        assert np.sqrt(np.mean(diff**2)) < 0.1


def test_stage4_contaminated_camera_fails(clean):
    session, _, config, reg = clean
    init = stage2_initialize_rig(reg, session, config)
    rig = stage3_radial_refine(init, reg, session, config)
    rng = np.random.default_rng(5)
    entries = {}
    for key, r in reg.entries.items():
        if key[0] == 4:
            pix = r.pixels.copy()
            bad = rng.random(len(pix)) < 0.95
            pix[bad] = rng.uniform([0, 0], [1024, 768], (np.count_nonzero(bad), 2))
            r = dataclasses.replace(r, pixels=pix)
        entries[key] = r
    tainted = dataclasses.replace(reg, entries=entries)
    with pytest.raises(NoValidSolution) as info:
        stage4_upgrade_cameras(rig, tainted, session, config)
    assert set(info.value.failures) == {4}


# --- full pipeline -----------------------------------------------------------------


def test_calibrate_noisy_session(noisy_result):
    session, truth, _, result = noisy_result
    check_result(result)
    assert np.array_equal(result.extrinsics[0].matrix(), np.eye(4))
    rep = compare_rigs(result, truth.rig.extrinsics)
    assert rep.max_rotation_deg < 0.5
    assert rep.max_center_cm < 0.005 * 100 * truth.rig.diameter() * 2
    d = result.diagnostics
    assert set(d) >= {"stage1", "stage2", "stage3", "stage4", "stage5", "final_reprojection_rms", "defaults_used"}
    assert 0.3 < d["final_reprojection_rms"] < 0.8
    assert d["stage3"]["final_cost"] <= d["stage2"]["radial_cost"]
    assert d["stage5"]["final_cost"] <= d["stage5"]["cost_before"]
    assert any("4 px" in text for text in d["defaults_used"])


def test_final_gauge_preserves_cost(noisy_result):
    session, _, config, result = noisy_result
    reg = stage1_estimate_radial_poses(session, config)
    keys = sorted(result.rig_poses)
    index = {k: n for n, k in enumerate(keys)}
    obs = inlier_observations(reg, index)
    poses = [result.rig_poses[session.framesets[k].frameset_id] for k in keys]
    base = full_cost(result.extrinsics, poses, result.intrinsics, obs, session.points)
    moved_extr, moved = regauge_full(result.extrinsics, dict(enumerate(poses)), camera=3)
    assert np.allclose(moved_extr[3].matrix(), np.eye(4))
    moved_cost = full_cost(moved_extr, [moved[n] for n in range(len(poses))], result.intrinsics, obs, session.points)
    assert moved_cost == pytest.approx(base, rel=1e-9)


def test_calibrate_deterministic_across_workers():
    session, _ = generate_session("helmet", 6, 1500, NoiseSpec(0.5, 0.1, 0.0, 13))
    config = CalibrationConfig(camera_model="equidistant", stage2_trials=5)
    a = calibrate(session, config)
    b = calibrate(session, dataclasses.replace(config, workers=3))
    for p, q in zip(a.extrinsics, b.extrinsics):
        assert np.array_equal(p.matrix(), q.matrix())
    for p, q in zip(a.intrinsics, b.intrinsics):
        assert np.array_equal(p.params, q.params)
    assert a.diagnostics["stage5"] == b.diagnostics["stage5"]


def test_parallel_axes_rig_fails_at_stage_2():
    rig = parallel_pair_preset(np.random.default_rng(3))
    session, _ = generate_session(rig, 10, 3000, NoiseSpec(0.5, 0.0, 0.0, 3))
    with pytest.raises(ParallelAxesDegenerate) as info:
        calibrate(session, CalibrationConfig(stage2_trials=5))
    assert info.value.stage == 2
