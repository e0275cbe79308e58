import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from radcal.camera import DivisionModel
from radcal.errors import DegenerateConfiguration, NoValidSolution, ParallelAxesDegenerate
from radcal.geometry import RadialPose, RigidPose, Rotation, radial_from_full, rotation_angle
from radcal.solvers import (
    CenteredCorrespondence,
    Correspondence2D3D,
    align_rigid,
    fit_radial_pose_linear,
    solve_p5p_radial,
    solve_rig_pose,
    solve_upgrade_linear,
    upgrade_linear_residuals,
    upgrade_linear_system,
)

from conftest import random_pose

seeds = st.integers(min_value=0, max_value=2**32 - 1)


def radial_instance(rng, n=5):
    """Noise-free centered observations of n points in front of a random pose."""
    P = random_pose(rng)
    Xc = np.column_stack([rng.uniform(-2, 2, n), rng.uniform(-2, 2, n), rng.uniform(2, 6, n)])
    X = P.inverse().apply(Xc)
    f = rng.uniform(200, 1000)
    v = f * Xc[:, :2] / Xc[:, 2:3]
    return P, X, v


def best_errors(poses, truth):
    rp = radial_from_full(truth)
    rot = min(rotation_angle(p.rotation.matrix().T @ rp.rotation.matrix()) for p in poses)
    k = int(np.argmin([rotation_angle(p.rotation.matrix().T @ rp.rotation.matrix()) for p in poses]))
    return rot, float(np.linalg.norm(poses[k].b - rp.b))


# --- P5P ----------------------------------------------------------------------


def test_p5p_recovers_ground_truth(rng):
    for _ in range(50):
        P, X, v = radial_instance(rng)
        poses = solve_p5p_radial((v, X))
        assert 1 <= len(poses) <= 4
        rot, trans = best_errors(poses, P)
        assert rot < 1e-6 and trans < 1e-6


def test_p5p_accepts_correspondence_objects(rng):
    P, X, v = radial_instance(rng)
    corrs = [CenteredCorrespondence(v[k], X[k]) for k in range(5)]
    assert best_errors(solve_p5p_radial(corrs), P)[0] < 1e-6
    raw = [Correspondence2D3D(v[k] + [10, 20], X[k]) for k in range(5)]
    assert best_errors(solve_p5p_radial([c.centered(np.array([10, 20])) for c in raw]), P)[0] < 1e-6


def test_p5p_solutions_satisfy_constraints(rng):
    P, X, v = radial_instance(rng)
    for pose in solve_p5p_radial((v, X)):
        u = pose.apply(X)
        cross = u[:, 0] * v[:, 1] - u[:, 1] * v[:, 0]
        assert np.all(np.abs(cross) <= 1e-6 * np.linalg.norm(u, axis=1) * np.linalg.norm(v, axis=1))
        assert np.allclose(pose.A @ pose.A.T, np.eye(2), atol=1e-9)


def test_p5p_collinear_points_degenerate(rng):
    X = np.outer(np.linspace(1, 5, 5), [1.0, 2.0, 3.0]) + [0, 0, 4]
    v = rng.normal(size=(5, 2))
    with pytest.raises(DegenerateConfiguration):
        solve_p5p_radial((v, X))


def test_p5p_wrong_count(rng):
    _, X, v = radial_instance(rng, 6)
    with pytest.raises(ValueError):
        solve_p5p_radial((v, X))


@settings(max_examples=30, deadline=None)
@given(seeds, st.floats(min_value=0.01, max_value=100))
def test_p5p_invariant_to_radius_scaling(seed, lam):
    rng = np.random.default_rng(seed)
    _, X, v = radial_instance(rng)
    a = solve_p5p_radial((v, X))
    b = solve_p5p_radial((lam * v, X))
    assert len(a) == len(b)
    for pa in a:
        assert min(np.max(np.abs(pa.matrix() - pb.matrix())) for pb in b) < 1e-6


def test_linear_radial_fit_is_oriented(rng):
    # Points must project to the observed side of their radial line.
    P, X, v = radial_instance(rng, 20)
    pose = fit_radial_pose_linear(v, X)
    assert np.all(np.sum(pose.apply(X) * v, axis=1) > 0)
    assert np.allclose(pose.matrix(), radial_from_full(P).matrix(), atol=1e-9)


# --- upgrade --------------------------------------------------------------------


def upgrade_instance(rng, f, t_z, mu, n):
    """Forward-generate observations consistent with the upgrade constraint."""
    division = DivisionModel(mu)
    r = rng.uniform(20, 600, n)
    phi = rng.uniform(0, 2 * np.pi, n)
    v = np.column_stack([r * np.cos(phi), r * np.sin(phi)])
    depth = rng.uniform(2, 8, n)  # Z_z + t_z
    R = r * depth / (f * division.denominator(r))
    Z = np.column_stack([R * np.cos(phi), R * np.sin(phi), depth - t_z])
    return v, Z


def test_upgrade_example():
    rng = np.random.default_rng(3)
    v, Z = upgrade_instance(rng, 450.0, 0.3, (-1e-7,), 3)
    (sol,) = solve_upgrade_linear(v, Z, n_dist=1)
    assert sol.focal == pytest.approx(450.0, rel=1e-6)
    assert sol.t_z == pytest.approx(0.3, rel=1e-6)
    assert sol.division.mu[0] == pytest.approx(-1e-7, rel=1e-6)


def test_upgrade_no_distortion_two_points():
    rng = np.random.default_rng(4)
    v, Z = upgrade_instance(rng, 700.0, -0.2, (), 2)
    (sol,) = solve_upgrade_linear(v, Z, n_dist=0)
    assert sol.focal == pytest.approx(700.0, rel=1e-12)
    assert sol.t_z == pytest.approx(-0.2, rel=1e-10)


def test_upgrade_equal_radii_degenerate():
    phi = np.linspace(0, 3, 6)
    v = 100 * np.column_stack([np.cos(phi), np.sin(phi)])
    Z = np.column_stack([np.cos(phi), np.sin(phi), np.linspace(2, 4, 6)])
    with pytest.raises(DegenerateConfiguration):
        solve_upgrade_linear(v, Z, n_dist=2)


def test_upgrade_overdetermined_and_self_consistent(rng):
    v, Z = upgrade_instance(rng, 600.0, 0.1, (-3e-7, 2e-13), 40)
    (sol,) = solve_upgrade_linear(v, Z, n_dist=2)
    A, rhs = upgrade_linear_system(v, Z, 2)
    assert np.allclose(upgrade_linear_residuals(sol, v, Z), A @ sol.unknowns - rhs, atol=1e-10)
    assert np.max(np.abs(upgrade_linear_residuals(sol, v, Z))) < 1e-8
    assert np.max(sol.radial_errors(v, Z)) < 1e-8


def test_upgrade_rejects_negative_focal(rng):
    # Points with negative depth are explained only by a negative focal length.
    v, Z = upgrade_instance(rng, 600.0, 0.1, (), 10)
    Z[:, 2] = -Z[:, 2] - 0.2
    with pytest.raises(NoValidSolution):
        solve_upgrade_linear(v, Z, n_dist=0)


def test_upgrade_rejects_points_behind(rng):
    v, Z = upgrade_instance(rng, 600.0, 0.1, (), 10)
    with pytest.raises(NoValidSolution):
        solve_upgrade_linear(v, Z, n_dist=0, min_front_fraction=1.01)


# --- rig pose -------------------------------------------------------------------


def test_rig_pose_identity():
    rng = np.random.default_rng(5)
    pairs = [(radial_from_full(random_pose(rng)),) * 2 for _ in range(3)]
    Q = solve_rig_pose(pairs)
    assert np.allclose(Q.matrix(), np.eye(4), atol=1e-12)


def test_rig_pose_recovers_forward_generated(rng):
    for _ in range(20):
        P = [random_pose(rng), random_pose(rng)]
        Q = random_pose(rng, 3.0)
        pairs = [(radial_from_full(p), radial_from_full(p.compose(Q))) for p in P]
        est = solve_rig_pose(pairs)
        assert np.allclose(est.matrix(), Q.matrix(), atol=1e-9)


def test_rig_pose_parallel_axes():
    P0 = RigidPose.identity()
    P1 = RigidPose(Rotation.from_rotvec([0, 0, 0.7]), [0.2, 0.0, 0.0])
    Q = RigidPose(Rotation.from_rotvec([0.1, 0.2, 0.3]), [1, 2, 3])
    pairs = [(radial_from_full(p), radial_from_full(p.compose(Q))) for p in (P0, P1)]
    with pytest.raises(ParallelAxesDegenerate):
        solve_rig_pose(pairs)


def test_rig_pose_equivariant(rng):
    P = [random_pose(rng) for _ in range(3)]
    Q = random_pose(rng)
    G = random_pose(rng)
    pairs = [(radial_from_full(p), radial_from_full(p.compose(Q))) for p in P]
    moved = [(a, t.compose(G)) for a, t in pairs]
    assert np.allclose(solve_rig_pose(moved).matrix(), solve_rig_pose(pairs).compose(G).matrix(), atol=1e-9)


def test_rig_pose_needs_two_cameras(rng):
    p = radial_from_full(random_pose(rng))
    with pytest.raises(ValueError):
        solve_rig_pose([(p, p)])


# --- rigid alignment ------------------------------------------------------------


def test_align_identical_sets(rng):
    X = rng.normal(size=(6, 3))
    assert np.allclose(align_rigid(X, X).matrix(), np.eye(4), atol=1e-12)


def test_align_recovers_motion(rng):
    for _ in range(20):
        X = rng.normal(size=(8, 3))
        G = random_pose(rng, 5.0)
        assert np.allclose(align_rigid(X, G.apply(X)).matrix(), G.matrix(), atol=1e-9)


def test_align_collinear_degenerate():
    X = np.outer([0.0, 1.0, 2.0], [1.0, 1.0, 0.0])
    with pytest.raises(DegenerateConfiguration):
        align_rigid(X, X)


def test_align_order_invariant(rng):
    X = rng.normal(size=(7, 3))
    Y = random_pose(rng).apply(X) + rng.normal(size=(7, 3)) * 0.01
    perm = rng.permutation(7)
    G1, G2 = align_rigid(X, Y), align_rigid(X[perm], Y[perm])
    r1 = np.sum((G1.apply(X) - Y) ** 2)
    r2 = np.sum((G2.apply(X[perm]) - Y[perm]) ** 2)
    assert r1 == pytest.approx(r2, rel=1e-12)


def test_align_is_global_minimum(rng):
    X = rng.normal(size=(7, 3))
    Y = random_pose(rng).apply(X) + rng.normal(size=(7, 3)) * 0.05
    G = align_rigid(X, Y)
    best = np.sum((G.apply(X) - Y) ** 2)
    for _ in range(200):
        H = RigidPose(Rotation.from_rotvec(rng.normal(size=3) * 0.01).compose(G.rotation),
                      G.translation + rng.normal(size=3) * 0.01)
        assert np.sum((H.apply(X) - Y) ** 2) >= best - 1e-12
